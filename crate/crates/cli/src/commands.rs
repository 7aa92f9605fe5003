use anyhow::{bail, Context, Result};
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use pii_core::client::{self, RunConfig};
use pii_core::conditioner::{self, Condition, ManifestRecord, RenderSpec, Renderer};
use pii_core::corpus::{self, Lexicon};
use pii_core::metrics;
use pii_core::report::{self, MetricReport, Scores};

use crate::UsageError;

pub const CONDITION_MANIFEST: &str = "manifest.jsonl";

struct QuestionEntry {
    item_id: String,
    image: PathBuf,
    question: String,
}

fn read_questions(path: &Path, image_dir: &Path) -> Result<Vec<QuestionEntry>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { image_dir.join(p) };
    if text.trim_start().starts_with('{') {
        return Ok(corpus::read_manifest(path)?
            .into_iter()
            .map(|item| QuestionEntry {
                image: resolve(&item.image_path),
                question: item.question.unwrap_or_default(),
                item_id: item.item_id,
            })
            .collect());
    }
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((image, question)) = line.split_once('\t') else {
            bail!(corpus::CorpusError::MalformedRecord {
                line: i + 1,
                reason: "expected image<TAB>question".into(),
            });
        };
        out.push(QuestionEntry {
            item_id: (i + 1).to_string(),
            image: resolve(Path::new(image.trim())),
            question: question.trim().to_string(),
        });
    }
    Ok(out)
}

fn file_safe(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_') { c } else { '_' })
        .collect()
}

/// Render every requested condition for every question. Outputs are named
/// `<stem>.<mode>.png`, or `<stem>.<item_id>.<mode>.png` when several
/// questions share an image.
pub fn condition(
    config: Option<&Path>,
    image_dir: &Path,
    questions: &Path,
    modes: &[Condition],
    out: &Path,
    fraction: Option<f64>,
    font_px: Option<u32>,
) -> Result<()> {
    let mut spec = match config {
        Some(p) => RunConfig::load(p)?.render,
        None => RenderSpec::default(),
    };
    if let Some(f) = fraction {
        spec.target_strip_fraction = f;
    }
    if let Some(px) = font_px {
        spec.font_px = px;
    }
    spec.validate().map_err(|e| UsageError(e.to_string()))?;
    let renderer = Renderer::new(spec)?;

    let entries = read_questions(questions, image_dir)?;
    let mut stem_count: HashMap<String, usize> = HashMap::new();
    for e in &entries {
        *stem_count.entry(stem(&e.image)).or_default() += 1;
    }
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let manifest_path = out.join(CONDITION_MANIFEST);
    let mut manifest = std::io::BufWriter::new(
        std::fs::File::create(&manifest_path).with_context(|| format!("creating {}", manifest_path.display()))?,
    );

    let mut written = 0usize;
    for e in &entries {
        let source = conditioner::load_source(&e.image)?;
        let s = stem(&e.image);
        for &mode in modes {
            let img = renderer
                .render_condition(&source, &e.question, mode)
                .with_context(|| format!("item {} ({})", e.item_id, e.image.display()))?;
            let name = if stem_count[&s] > 1 {
                format!("{s}.{}.{mode}.png", file_safe(&e.item_id))
            } else {
                format!("{s}.{mode}.png")
            };
            let path = out.join(&name);
            conditioner::write_png(&img.pixels, &path)?;
            let g = &img.geometry;
            if g.exceeds_target {
                tracing::warn!(output = %name, fraction = g.achieved_fraction, "strip exceeds target fraction to fit the text");
            }
            let record = ManifestRecord {
                source: e.image.display().to_string(),
                output: path.display().to_string(),
                mode,
                item_id: Some(e.item_id.clone()),
                question: (!e.question.is_empty()).then(|| e.question.clone()),
                original_w: g.original_w,
                original_h: g.original_h,
                strip_h: g.strip_h,
                achieved_fraction: g.achieved_fraction,
                content_hash: img.content_hash.clone(),
                font_name: g.font_name.clone(),
                font_digest: g.font_digest.clone(),
            };
            writeln!(manifest, "{}", serde_json::to_string(&record)?)?;
            written += 1;
        }
    }
    manifest.flush()?;
    println!("wrote {written} image(s) and {}", manifest_path.display());
    Ok(())
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

pub fn corpus_pope(annotations: &Path, images: &Path, n: Option<usize>, seed: u64, manifest: &Path) -> Result<()> {
    let items = corpus::load_pope(annotations, images)?;
    let items = match n {
        Some(n) => corpus::sample_items(&items, n, seed)?,
        None => items,
    };
    corpus::write_manifest(manifest, &items)?;
    println!("wrote {} POPE item(s) to {}", items.len(), manifest.display());
    Ok(())
}

pub fn corpus_coco(instances: &Path, images: &Path, n: usize, seed: u64, manifest: &Path) -> Result<()> {
    let items = corpus::load_coco_caption_task(images, instances, n, seed)?;
    corpus::write_manifest(manifest, &items)?;
    println!("wrote {} caption item(s) to {}", items.len(), manifest.display());
    Ok(())
}

pub fn run(config: &Path, items: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let items = corpus::read_manifest(items)?;
    let rt = tokio::runtime::Runtime::new()?;
    let log = rt.block_on(client::run_or_resume(&items, &cfg, out))?;
    println!(
        "ok {} failed {} skipped {} requests {} -> {}",
        log.ok,
        log.failed,
        log.skipped,
        log.requests_sent,
        out.display()
    );
    Ok(())
}

fn load_run(run_dir: &Path) -> Result<(client::RunManifest, Vec<client::Transcript>)> {
    let manifest = client::read_manifest(run_dir)?;
    let transcripts: Vec<_> = client::read_transcripts(&client::transcripts_path(run_dir))?
        .into_iter()
        .filter(|t| t.condition == manifest.config.condition)
        .collect();
    Ok((manifest, transcripts))
}

pub fn score_pope(run_dir: &Path, items: &Path, out: &Path) -> Result<()> {
    let (manifest, transcripts) = load_run(run_dir)?;
    let items = corpus::read_manifest(items)?;
    let m = metrics::score_pope(&transcripts, &items)?;
    println!(
        "accuracy {:.4} precision {:.4} recall {:.4} f1 {:.4} yes_ratio {:.4} (n={}, abstain={}, failed={})",
        m.accuracy, m.precision, m.recall, m.f1, m.yes_ratio, m.n_total, m.n_abstain, m.n_failed
    );
    let report = MetricReport::from_run(&manifest, Scores::Pope(m));
    report.write_json(out)?;
    Ok(())
}

pub fn score_chair(run_dir: &Path, items: &Path, lexicon: Option<&Path>, out: &Path) -> Result<()> {
    let (manifest, transcripts) = load_run(run_dir)?;
    let items = corpus::read_manifest(items)?;
    let lex = match lexicon {
        Some(p) => corpus::load_synonym_lexicon(p)?,
        None => Lexicon::coco_default(),
    };
    let m = metrics::score_chair(&transcripts, &items, &lex)?;
    println!(
        "chair_s {:.4} chair_i {:.4} (captions={}, no_mention={}, failed={})",
        m.chair_s, m.chair_i, m.n_captions, m.n_no_mention, m.n_failed
    );
    let report = MetricReport::from_run(&manifest, Scores::Chair(m));
    report.write_json(out)?;
    Ok(())
}

pub fn report(paths: &[PathBuf], baseline: &str, out: &Path) -> Result<()> {
    let reports = paths
        .iter()
        .map(|p| MetricReport::read_json(p))
        .collect::<Result<Vec<_>, _>>()?;
    let table = report::aggregate(&reports, baseline)?;
    let md = report::table_to_markdown(&table);
    report::write_table_csv(&table, &out.join("comparison.csv"))?;
    report::write_text(&out.join("comparison.md"), &md)?;
    print!("{md}");
    Ok(())
}
