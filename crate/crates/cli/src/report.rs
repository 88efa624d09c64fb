use std::fmt::Write as _;
use std::path::Path;

use pvdet::eval::ApResult;
use serde_json::{json, Map, Value};

use crate::error::CliResult;

/// `{metric: {class: {difficulty: {AP11, AP40, num_gt, tp, fp}}}}`.
pub fn metrics_json(res: &ApResult) -> Value {
    let mut root = Map::new();
    for ((class, level, metric), e) in &res.entries {
        let m = root
            .entry(metric.name())
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .expect("object");
        let c = m
            .entry(class.name())
            .or_insert_with(|| Value::Object(Map::new()))
            .as_object_mut()
            .expect("object");
        c.insert(
            level.name().to_string(),
            json!({"AP11": e.ap11, "AP40": e.ap40, "num_gt": e.num_gt, "tp": e.tp, "fp": e.fp}),
        );
    }
    Value::Object(root)
}

/// `metric,class,difficulty,score,recall,precision` rows.
pub fn pr_csv(res: &ApResult) -> String {
    let mut s = String::from("metric,class,difficulty,score,recall,precision\n");
    for ((class, level, metric), e) in &res.entries {
        for p in &e.pr {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                metric.name(),
                class.name(),
                level.name(),
                p.score,
                p.recall,
                p.precision
            );
        }
    }
    s
}

pub fn write_json(path: &Path, v: &Value) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Writes to `path`, or stdout when absent.
pub fn emit_json(path: Option<&Path>, v: &Value) -> CliResult<()> {
    match path {
        Some(p) => write_json(p, v),
        None => {
            println!("{}", serde_json::to_string_pretty(v)?);
            Ok(())
        }
    }
}
