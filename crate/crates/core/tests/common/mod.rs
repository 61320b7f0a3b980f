#![allow(dead_code)]

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use uniqa::pipeline::{Engine, PipelineConfig};
use uniqa::retrieval::{build_index, EmbeddingProvider, IndexManifest};
use uniqa::unirep::{make_clue, ImageMeta, ObjectAttr, SourceDoc, TableDoc, TextDoc, TextualizationConfig};

/// Serves `router` on an ephemeral port from a dedicated runtime thread.
pub fn spawn_server(router: axum::Router) -> SocketAddr {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    listener.set_nonblocking(true).unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener).unwrap();
            axum::serve(listener, router).await.unwrap();
        });
    });
    addr
}

pub fn small_docs() -> Vec<SourceDoc> {
    vec![
        SourceDoc::Text(TextDoc {
            id: "t-capital".into(),
            title: Some("Capitals".into()),
            text: "The capital of Peru is Lima. Lima lies on the coast.".into(),
        }),
        SourceDoc::Table(TableDoc {
            id: "tb-derby".into(),
            title: Some("Derby winners".into()),
            header: vec!["race".into(), "winner".into()],
            rows: vec![vec!["Santa Derby".into(), "Silver Jet".into()]],
        }),
        SourceDoc::Image(ImageMeta {
            id: "im-parade".into(),
            title: Some("Parade".into()),
            caption: "a parade in the old town".into(),
            objects: vec![ObjectAttr { name: "balloon".into(), attributes: vec!["red".into()] }],
        }),
    ]
}

pub fn local_engine(docs: &[SourceDoc], config: PipelineConfig) -> Engine {
    let t = config.textualization;
    let clues = docs.iter().map(|d| make_clue(d, &t).unwrap()).collect();
    let embedder = EmbeddingProvider::from_spec(&config.embedder).unwrap();
    let index = build_index(clues, &embedder).unwrap();
    let manifest = IndexManifest::describe(&index, &t);
    Engine::with_index(Arc::new(index), manifest, config).unwrap()
}

pub fn write_corpus(path: &Path, docs: &[SourceDoc]) {
    let mut out = String::new();
    for d in docs {
        let line = match d {
            SourceDoc::Text(t) => serde_json::json!({"id": t.id, "modality": "text", "title": t.title, "text": t.text}),
            SourceDoc::Table(t) => serde_json::json!({
                "id": t.id, "modality": "table", "title": t.title,
                "table": {"header": t.header, "rows": t.rows}
            }),
            SourceDoc::Image(i) => serde_json::json!({
                "id": i.id, "modality": "image", "title": i.title,
                "image": {"caption": i.caption, "objects": i.objects}
            }),
        };
        out.push_str(&line.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).unwrap();
}

pub fn default_textualization() -> TextualizationConfig {
    TextualizationConfig::default()
}
