//! Async HTTP client wrapping the service endpoints one method each.

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;
use uuid::Uuid;

use cvloc_core::experiment::{ExperimentReport, StrategyComparison, SweepReport};

use crate::{
    ErrorBody, ExperimentRequest, KmlCheckRequest, KmlCheckResponse, SessionCreateRequest,
    SessionInfo, SessionStepRequest, SessionStepResponse, SweepRequest, TableCheckRequest,
    TableCheckResponse,
};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Transport(#[from] reqwest::Error),
    #[error("server returned {status}: {message}")]
    Api { status: u16, message: String },
    #[error("could not decode {status} response body: {source}")]
    Decode { status: u16, source: serde_json::Error },
}

pub struct Client {
    http: reqwest::Client,
    base: String,
}

impl Client {
    /// `base` is the service root, e.g. `http://127.0.0.1:8347`.
    pub fn new(base: impl Into<String>) -> Self {
        let mut base = base.into();
        while base.ends_with('/') {
            base.pop();
        }
        Self { http: reqwest::Client::new(), base }
    }

    async fn decode<T: DeserializeOwned>(resp: reqwest::Response) -> Result<T, ClientError> {
        let status = resp.status();
        let bytes = resp.bytes().await?;
        if status.is_success() {
            // Parsed with serde_json's float_roundtrip so report floats come
            // back bit-identical to what the server computed.
            return serde_json::from_slice(&bytes)
                .map_err(|e| ClientError::Decode { status: status.as_u16(), source: e });
        }
        let message = match serde_json::from_slice::<ErrorBody>(&bytes) {
            Ok(body) => body.error,
            Err(_) => status.canonical_reason().unwrap_or("unknown error").to_string(),
        };
        Err(ClientError::Api { status: status.as_u16(), message })
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(
        &self,
        path: &str,
        body: &Req,
    ) -> Result<Resp, ClientError> {
        let resp = self.http.post(format!("{}{path}", self.base)).json(body).send().await?;
        Self::decode(resp).await
    }

    pub async fn health(&self) -> Result<(), ClientError> {
        let resp = self.http.get(format!("{}/health", self.base)).send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(());
        }
        Err(ClientError::Api {
            status: status.as_u16(),
            message: status.canonical_reason().unwrap_or("unknown error").to_string(),
        })
    }

    pub async fn run(&self, req: &ExperimentRequest) -> Result<ExperimentReport, ClientError> {
        self.post("/experiments/run", req).await
    }

    pub async fn compare(
        &self,
        req: &ExperimentRequest,
    ) -> Result<StrategyComparison, ClientError> {
        self.post("/experiments/compare", req).await
    }

    pub async fn sweep(&self, req: &SweepRequest) -> Result<SweepReport, ClientError> {
        self.post("/experiments/sweep", req).await
    }

    pub async fn check_kml(&self, req: &KmlCheckRequest) -> Result<KmlCheckResponse, ClientError> {
        self.post("/ingest/kml", req).await
    }

    pub async fn check_table(
        &self,
        req: &TableCheckRequest,
    ) -> Result<TableCheckResponse, ClientError> {
        self.post("/ingest/table", req).await
    }

    pub async fn create_session(
        &self,
        req: &SessionCreateRequest,
    ) -> Result<SessionInfo, ClientError> {
        self.post("/sessions", req).await
    }

    pub async fn step_session(
        &self,
        id: Uuid,
        req: &SessionStepRequest,
    ) -> Result<SessionStepResponse, ClientError> {
        self.post(&format!("/sessions/{id}/step"), req).await
    }

    pub async fn get_session(&self, id: Uuid) -> Result<SessionInfo, ClientError> {
        let resp = self.http.get(format!("{}/sessions/{id}", self.base)).send().await?;
        Self::decode(resp).await
    }

    pub async fn delete_session(&self, id: Uuid) -> Result<(), ClientError> {
        let resp = self.http.delete(format!("{}/sessions/{id}", self.base)).send().await?;
        let status = resp.status();
        if status.is_success() {
            return Ok(());
        }
        let message = match serde_json::from_slice::<ErrorBody>(&resp.bytes().await?) {
            Ok(body) => body.error,
            Err(_) => status.canonical_reason().unwrap_or("unknown error").to_string(),
        };
        Err(ClientError::Api { status: status.as_u16(), message })
    }
}
