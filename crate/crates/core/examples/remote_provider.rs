//! Talk to a model server over HTTP. A throwaway in-process server stands in
//! for the real sidecar here; point `ProviderEndpoint::new` at yours instead.

use serde_json::{json, Value};
use ultraese::providers::{Embedder, LanguageModel, ProviderEndpoint, RemoteProvider};

fn serve(server: tiny_http::Server) {
    for mut req in server.incoming_requests() {
        let body: Value = serde_json::from_reader(req.as_reader()).unwrap_or(Value::Null);
        let reply = match req.url() {
            "/v1/embed" => {
                let n = body["texts"].as_array().map_or(0, Vec::len);
                json!({ "vectors": (0..n).map(|i| vec![i as f64, 1.0]).collect::<Vec<_>>() })
            }
            "/v1/complete" => json!({ "text": "Class: phones | Attr: os=android" }),
            "/v1/score_continuation" => json!({ "logprob": -2.5, "token_count": 2 }),
            _ => {
                let resp = tiny_http::Response::from_string(r#"{"error":"no such route","request_id":"x"}"#)
                    .with_status_code(404);
                req.respond(resp).ok();
                continue;
            }
        };
        req.respond(tiny_http::Response::from_string(reply.to_string())).ok();
    }
}

fn main() {
    let server = tiny_http::Server::http("127.0.0.1:0").expect("bind");
    let url = format!("http://{}", server.server_addr().to_ip().expect("ip"));
    std::thread::spawn(move || serve(server));

    let provider = RemoteProvider::new(ProviderEndpoint::new(url)).expect("endpoint");
    let texts = vec!["[MASK] runs Android.".to_string(), "I bought a [MASK].".to_string()];
    println!("embed: {:?}", provider.embed(&texts));
    println!("complete: {:?}", provider.complete("Name the class:", 16));
    println!("score: {:?}", provider.score_continuation("Pixel 8 is similar to ", "Galaxy S24"));
    println!("ranking (unrouted): {}", provider.next_token_logprobs(&[], &[]).unwrap_err());
}
