//! Blocking HTTP POST shared by the remote assistant and speech backends.

use std::io::ErrorKind;
use std::time::Duration;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PostError {
    #[error("request timed out")]
    Timeout,
    #[error("endpoint unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Clone)]
pub struct Poster {
    agent: ureq::Agent,
}

impl Poster {
    pub fn new(timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(true)
            .build()
            .into();
        Poster { agent }
    }

    pub fn post(&self, url: &str, content_type: &str, body: &[u8]) -> Result<Vec<u8>, PostError> {
        let response = self
            .agent
            .post(url)
            .header("content-type", content_type)
            .send(body)
            .map_err(classify)?;
        response
            .into_body()
            .with_config()
            .limit(64 * 1024 * 1024)
            .read_to_vec()
            .map_err(classify)
    }
}

fn classify(err: ureq::Error) -> PostError {
    match err {
        ureq::Error::Timeout(_) => PostError::Timeout,
        ureq::Error::Io(e) if matches!(e.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock) => {
            PostError::Timeout
        }
        other => PostError::Unavailable(other.to_string()),
    }
}
