//! Forwards PTZ commands to camera servers.

use std::collections::BTreeMap;
use std::time::Duration;

use crate::servers::PtzAck;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PtzError {
    #[error("unknown camera `{0}`")]
    UnknownCamera(String),
    #[error("camera `{camera}` unreachable: {message}")]
    Unreachable { camera: String, message: String },
    #[error("camera `{camera}` rejected the command ({status}): {body}")]
    Rejected {
        camera: String,
        status: u16,
        body: String,
    },
}

#[derive(Debug, Clone)]
pub struct PtzForwarder {
    cameras: BTreeMap<String, String>,
    client: reqwest::Client,
}

impl PtzForwarder {
    /// `cameras` maps camera id to its base URL.
    pub fn new(cameras: BTreeMap<String, String>) -> Self {
        Self {
            cameras,
            client: reqwest::Client::builder()
                .timeout(Duration::from_secs(5))
                .build()
                .expect("http client"),
        }
    }

    /// Pan and tilt are deltas in radians; zoom is absolute and left
    /// unchanged when `None`.
    pub async fn forward(
        &self,
        camera_id: &str,
        pan: f64,
        tilt: f64,
        zoom: Option<f64>,
    ) -> Result<PtzAck, PtzError> {
        let base = self
            .cameras
            .get(camera_id)
            .ok_or_else(|| PtzError::UnknownCamera(camera_id.to_string()))?;
        let unreachable = |e: reqwest::Error| PtzError::Unreachable {
            camera: camera_id.to_string(),
            message: e.to_string(),
        };
        let resp = self
            .client
            .get(format!("{base}/ptz"))
            .query(&[("pan", pan), ("tilt", tilt)])
            .query(&zoom.map(|z| vec![("zoom", z)]).unwrap_or_default())
            .send()
            .await
            .map_err(unreachable)?;
        let status = resp.status();
        if !status.is_success() {
            return Err(PtzError::Rejected {
                camera: camera_id.to_string(),
                status: status.as_u16(),
                body: resp.text().await.unwrap_or_default(),
            });
        }
        resp.json::<PtzAck>().await.map_err(unreachable)
    }
}
