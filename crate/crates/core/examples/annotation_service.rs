//! Runs the annotation service on a local port and plays the annotator with
//! ground-truth labels over HTTP.

use std::collections::BTreeMap;

use lada::config::Config;
use lada::service::{bind, serve_on, AppState, MetricsRow, Phase, QueryView, Status};
use serde_json::json;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let listener = bind("127.0.0.1:0").await?;
    let base = format!("http://{}", listener.local_addr()?);
    let (stop, stopped) = tokio::sync::oneshot::channel::<()>();
    let server = tokio::spawn(serve_on(listener, AppState::default(), async {
        stopped.await.ok();
    }));

    let mut cfg = Config::default();
    cfg.data.n = 200;
    cfg.data.n_test = 50;
    cfg.run.rounds = 3;
    cfg.run.seeds = vec![0];
    let truth = cfg.load_dataset()?.labels;

    let http = reqwest::Client::new();
    let created: serde_json::Value = http.post(format!("{base}/sessions")).json(&cfg).send().await?.json().await?;
    let id = created["id"].as_str().unwrap_or_default().to_string();
    println!("session {id}");

    loop {
        let st: Status = http.get(format!("{base}/sessions/{id}")).send().await?.json().await?;
        match st.phase {
            Phase::Finished => break,
            Phase::AwaitingLabels => {}
            Phase::Failed => return Err(st.error.unwrap_or_default().into()),
            Phase::Training => {
                tokio::time::sleep(std::time::Duration::from_millis(50)).await;
                continue;
            }
        }
        let qs: Vec<QueryView> = http.get(format!("{base}/sessions/{id}/queries")).send().await?.json().await?;
        let labels: BTreeMap<String, usize> = qs
            .iter()
            .filter(|q| q.label.is_none())
            .map(|q| (q.instance_id.to_string(), truth[q.instance_id]))
            .collect();
        println!("round {}: labeling {} instances", st.round + 1, labels.len());
        http.post(format!("{base}/sessions/{id}/labels"))
            .json(&json!({ "labels": labels }))
            .send()
            .await?
            .error_for_status()?;
    }

    let rows: Vec<MetricsRow> = http.get(format!("{base}/sessions/{id}/metrics")).send().await?.json().await?;
    for r in rows {
        println!("round {} labeled {} acc {:.3}", r.round, r.labeled, r.test_acc);
    }
    stop.send(()).ok();
    server.await??;
    Ok(())
}
