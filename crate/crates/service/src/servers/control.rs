//! Action endpoint `GET /action?id=&name=&value=`.

use std::sync::Arc;

use axum::extract::{Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use vigil_core::vdevices::{handle_control_request, ControlQuery, ControlQueue};
use vigil_core::world::World;

use crate::hub::SnapshotHub;

#[derive(Clone)]
struct Ctx {
    world: Arc<World>,
    hub: Arc<SnapshotHub>,
    queue: ControlQueue,
}

pub fn router(world: Arc<World>, hub: Arc<SnapshotHub>, queue: ControlQueue) -> Router {
    Router::new()
        .route("/action", get(action))
        .with_state(Ctx { world, hub, queue })
}

async fn action(State(ctx): State<Ctx>, Query(q): Query<ControlQuery>) -> Response {
    let state = ctx.hub.latest();
    let resp = handle_control_request(&ctx.world, &state, &ctx.queue, &q);
    let status = StatusCode::from_u16(resp.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(resp.body)).into_response()
}
