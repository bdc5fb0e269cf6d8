use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use anonproxy_core::detect::detect;
use anonproxy_core::transform::{anonymize_instruction, render_masks, synthesize_virtual_ui, xml_content_strings};
use anonproxy_core::{NerAdapter, SessionState, Source};
use anonproxy_eval::Scenario;
use anonproxy_service::config::AdapterSpec;
use serde::Serialize;

use crate::fail::{write, Exit, Failure};
use crate::BenchArgs;

#[derive(Serialize)]
struct Stage {
    stage: &'static str,
    count: usize,
    mean_ms: f64,
    total_ms: f64,
}

#[derive(Serialize)]
struct BenchReport {
    scenarios: usize,
    images: usize,
    stages: Vec<Stage>,
}

const STAGES: [&str; 4] = ["instruction", "detection", "virtual_ui", "mask_render"];

fn corpus(dir: &PathBuf) -> Result<Vec<Scenario>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::new("io-error", format!("{}: not a directory", dir.display())));
    }
    let mut paths: Vec<PathBuf> = walkdir::WalkDir::new(dir)
        .into_iter()
        .filter_map(Result::ok)
        .map(|e| e.into_path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    // anything that is not a scenario (goldens, transcripts) is skipped
    Ok(paths.iter().filter_map(|p| Scenario::load(p).ok()).collect())
}

pub fn bench(args: &BenchArgs) -> Result<Exit, Failure> {
    let scenarios = corpus(&args.corpus)?;
    if scenarios.is_empty() {
        return Err(Failure::new("corpus-empty", format!("no scenario files under {}", args.corpus.display())));
    }
    let cfg = if args.config.given() { Some(args.config.load()?) } else { None };
    let mut times: [Vec<Duration>; 4] = Default::default();
    for s in &scenarios {
        let config = cfg.as_ref().map(|c| c.session.clone()).or_else(|| s.config.clone()).unwrap_or_default();
        let adapter: Arc<dyn NerAdapter> = match &cfg {
            Some(c) if c.adapter != AdapterSpec::None => c.build_adapter()?,
            _ => Arc::new(s.detector.adapter()),
        };
        let mut session = SessionState::new(format!("bench-{}", s.name), config).map_err(|e| Failure::from(&e))?;
        let t = Instant::now();
        anonymize_instruction(&mut session, &s.instruction, adapter.as_ref()).map_err(|e| Failure::from(&e))?;
        times[0].push(t.elapsed());
        let size = session.config().screen;
        let canvas = image::RgbImage::from_pixel(size.width, size.height, image::Rgb([255, 255, 255]));
        for screen in &s.screens {
            let t = Instant::now();
            for text in xml_content_strings(&screen.xml) {
                detect(&session, &text, Source::Xml, adapter.as_ref()).map_err(|e| Failure::from(&e))?;
            }
            for tok in &screen.ocr_tokens {
                detect(&session, &tok.text, Source::Ocr, adapter.as_ref()).map_err(|e| Failure::from(&e))?;
            }
            times[1].push(t.elapsed());
            let t = Instant::now();
            let ui = synthesize_virtual_ui(&mut session, &screen.xml, &screen.ocr_tokens, adapter.as_ref())
                .map_err(|e| Failure::from(&e))?;
            times[2].push(t.elapsed());
            let t = Instant::now();
            render_masks(&canvas, &ui.mask_plan).map_err(|e| Failure::from(&e))?;
            times[3].push(t.elapsed());
        }
    }
    let stages: Vec<Stage> = STAGES
        .iter()
        .zip(&times)
        .map(|(name, ts)| {
            let total = ts.iter().map(Duration::as_secs_f64).sum::<f64>() * 1000.0;
            Stage { stage: name, count: ts.len(), mean_ms: total / ts.len().max(1) as f64, total_ms: total }
        })
        .collect();
    let report = BenchReport { scenarios: scenarios.len(), images: times[1].len(), stages };
    if let Some(p) = &args.report {
        let mut text = serde_json::to_string_pretty(&report).expect("serializes");
        text.push('\n');
        write(p, text.as_bytes())?;
    }
    println!("{} scenarios, {} images", report.scenarios, report.images);
    println!("{:<12}  {:>6}  {:>10}  {:>10}", "stage", "count", "mean_ms", "total_ms");
    for s in &report.stages {
        println!("{:<12}  {:>6}  {:>10.4}  {:>10.3}", s.stage, s.count, s.mean_ms, s.total_ms);
    }
    Ok(Exit::Ok)
}
