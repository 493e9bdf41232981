//! The single boundary to text-generation models: a generation-client
//! contract, an HTTP implementation of the wire protocol, a deterministic
//! mock, and postprocessing of raw generations.
//!
//! Wire protocol: JSON over HTTP POST to `/generate`, request
//! `{"prompt", "max_tokens", "stop"}`, response `{"text"}`. The bundled stub
//! server implements it for integration tests.

mod client;
mod postprocess;
pub mod stub;

pub use client::{
    client_from_endpoint, generate_bulk, GenRequest, GenResponse, GenerationClient, HttpClient,
    MockClient, MockMode, MockTable, ENDPOINT_ENV,
};
pub use postprocess::{normalize_abstain, truncate_output, AbstainConfig, ABSTAIN_TOKEN};
