//! Serves any [`Backend`] over the JSON protocol.
//!
//! Used to run the toy backend out of process and to test the client and
//! conformance checks against a real socket.

use std::sync::Arc;
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Response, Server};

use super::wire::*;
use super::{Backend, ModelHandle};
use crate::error::{Error, Result};

pub struct ServerHandle {
    server: Arc<Server>,
    url: String,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn url(&self) -> &str {
        &self.url
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` (e.g. `127.0.0.1:0`) and serves requests on a background
/// thread.
pub fn serve(backend: Arc<dyn Backend>, addr: &str) -> Result<ServerHandle> {
    let server = Server::http(addr).map_err(|e| Error::Backend(format!("bind {addr}: {e}")))?;
    let server = Arc::new(server);
    let url = match server.server_addr().to_ip() {
        Some(a) => format!("http://{a}"),
        None => return Err(Error::Backend(format!("{addr} is not an IP address"))),
    };
    let worker = Arc::clone(&server);
    let thread = std::thread::spawn(move || {
        for mut request in worker.incoming_requests() {
            let mut body = String::new();
            let (status, payload) = if request.method() != &Method::Post {
                (405, error_body("only POST is supported"))
            } else if let Err(e) = request.as_reader().read_to_string(&mut body) {
                (400, error_body(&e.to_string()))
            } else {
                dispatch(backend.as_ref(), request.url(), &body)
            };
            let header = Header::from_bytes("Content-Type", "application/json").expect("header");
            let response = Response::from_string(payload)
                .with_status_code(status)
                .with_header(header);
            let _ = request.respond(response);
        }
    });
    Ok(ServerHandle {
        server,
        url,
        thread: Some(thread),
    })
}

fn error_body(msg: &str) -> String {
    serde_json::to_string(&ErrorResponse {
        error: msg.to_string(),
    })
    .expect("error body serializes")
}

fn parse<T: DeserializeOwned>(body: &str) -> std::result::Result<T, (u16, String)> {
    serde_json::from_str(body).map_err(|e| (400, error_body(&format!("bad request: {e}"))))
}

fn reply<T: Serialize>(r: Result<T>) -> (u16, String) {
    match r {
        Ok(v) => (200, serde_json::to_string(&v).expect("response serializes")),
        Err(e) => (400, error_body(&e.to_string())),
    }
}

/// Routes one request body to the backend; returns status and JSON payload.
pub fn dispatch(backend: &dyn Backend, path: &str, body: &str) -> (u16, String) {
    let result = (|| -> std::result::Result<(u16, String), (u16, String)> {
        Ok(match path {
            "/capabilities" => reply(backend.capabilities().map(|c| CapabilitiesResponse {
                flags: c.iter().map(|f| f.name().to_string()).collect(),
            })),
            "/finetune" => {
                let req: FinetuneRequest = parse(body)?;
                let base = ModelHandle::tuned(req.base_model_id);
                reply(
                    backend
                        .finetune(&base, &req.examples, &req.spec)
                        .map(|h| FinetuneResponse {
                            model_id: h.model_id,
                        }),
                )
            }
            "/generate" => {
                let req: GenerateRequest = parse(body)?;
                let model = ModelHandle::tuned(req.model_id);
                reply(backend.generate(&model, &req.inputs, &req.mode).map(|g| {
                    GenerateResponse {
                        generations: g
                            .into_iter()
                            .map(|(id, gens)| {
                                let wire = gens
                                    .into_iter()
                                    .map(|g| WireGeneration {
                                        text: g.text,
                                        token_entropies: g.token_entropies,
                                    })
                                    .collect();
                                (id, wire)
                            })
                            .collect(),
                    }
                }))
            }
            "/embed" => {
                let req: EmbedRequest = parse(body)?;
                reply(backend.embed(&req.inputs).map(|e| EmbedResponse {
                    dim: e.dim(),
                    vectors: e.iter().map(|(k, v)| (k.to_string(), v.to_vec())).collect(),
                }))
            }
            "/score" => {
                let req: ScoreRequest = parse(body)?;
                reply(
                    backend
                        .score(req.kind, &req.items)
                        .map(|scores| ScoreResponse { scores }),
                )
            }
            other => (404, error_body(&format!("unknown endpoint {other}"))),
        })
    })();
    result.unwrap_or_else(|e| e)
}
