//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.
//!
//! Criteria 4, 5 and 7 drive the `mmcap` binary on synthetic data; the rest
//! call the library directly.

#[path = "../../core/tests/support/gradcheck.rs"]
mod gradcheck;
#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use mmcap::aggregation::{activation_energies, se_weights, Decision, SeParams};
use mmcap::autodiff::{BnMode, Graph, ParamStore, Tensor};
use mmcap::checkpoint;
use mmcap::config::RunConfig;
use mmcap::dataio::{FeatureMatrix, Manifest, Vocabulary, RESERVED, SOS};
use mmcap::generator::Model;
use mmcap::metrics::{bleu4, cider, clipped_precision, rouge_l};
use mmcap_cli::report::AttributionReport;
use mmcap_cli::{CaptionLine, TrainSummary};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EPOCHS: usize = 200;
const ABLATION_EPOCHS: usize = 60;

struct Workspace {
    _tmp: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

fn mmcap(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_mmcap"))
        .args(args)
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    if out.status.success() {
        Ok(String::from_utf8_lossy(&out.stdout).into_owned())
    } else {
        Err(format!("mmcap {}: {}", args[0], String::from_utf8_lossy(&out.stderr).trim()))
    }
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn toy_config(ws: &Workspace) -> Result<String, String> {
    let cfg = serde_json::json!({
        "t_v": 10, "t_a": 10, "visual_dim": 16, "audio_dim": 16,
        "visual_proj_dim": 32, "visual_hidden": 32, "audio_hidden": 16,
        "embed_dim": 32, "joint_dim": 32, "blocks": 2,
        "batch_size": 8, "lr": 2e-3, "decay_every": 1000, "max_epochs": EPOCHS,
        "val_split": "train", "seed": 0
    });
    let p = ws.path("toy.json");
    std::fs::write(&p, cfg.to_string()).map_err(|e| e.to_string())?;
    Ok(p.display().to_string())
}

fn random_model(blocks: usize, seed: u64) -> Model {
    let mut rc = RunConfig::default();
    (rc.t_v, rc.t_a, rc.visual_dim, rc.audio_dim) = (4, 3, 5, 4);
    (rc.visual_proj_dim, rc.visual_hidden, rc.audio_hidden) = (4, 4, 3);
    (rc.embed_dim, rc.joint_dim, rc.blocks) = (4, 6, blocks);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Model::init(rc.model_config(RESERVED + 8), &mut rng).unwrap();
    let ids: Vec<_> = m.store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        m.store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = rng.random_range(-0.6..0.6));
    }
    for br in [m.visual.as_mut(), m.audio.as_mut()].into_iter().flatten() {
        for st in &mut br.cnn.stats {
            for s in st.iter_mut() {
                s.mean.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
                s.var.iter_mut().for_each(|v| *v = rng.random_range(0.5..1.5));
            }
        }
    }
    m
}

fn eval_logits(m: &Model, v: &Tensor, a: &Tensor, tokens: &[usize]) -> Vec<f32> {
    let mut g = Graph::new();
    let f = m.forward(&mut g, Some(v), Some(a), tokens, tokens.len(), BnMode::Eval).unwrap();
    g.value(f.logits).to_vec()
}

fn autoregressive() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (len, vocab) = (8, RESERVED + 8);
    let (mut worst, mut least_future) = (0.0f32, f32::INFINITY);
    for k in [1, 2, 10] {
        let m = random_model(k, k as u64);
        let c = &m.config;
        let v = Tensor::new([1, c.t_v, c.visual_dim], (0..c.t_v * c.visual_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let a = Tensor::new([1, c.t_a, c.audio_dim], (0..c.t_a * c.audio_dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        for _ in 0..50 {
            let mut seq = vec![SOS];
            seq.extend((1..len).map(|_| rng.random_range(RESERVED..vocab)));
            let p = rng.random_range(0..len - 1);
            let mut pert = seq.clone();
            for t in &mut pert[p + 1..] {
                *t = RESERVED + (*t - RESERVED + rng.random_range(1..vocab - RESERVED)) % (vocab - RESERVED);
            }
            let (x, y) = (eval_logits(&m, &v, &a, &seq), eval_logits(&m, &v, &a, &pert));
            let split = (p + 1) * vocab;
            let past = x[..split].iter().zip(&y[..split]).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            let future = x[split..].iter().zip(&y[split..]).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
            worst = worst.max(past);
            least_future = least_future.min(future);
        }
    }
    if worst >= 1e-5 {
        return Err(format!("earlier logits moved by {worst:.3e}"));
    }
    if least_future <= 0.0 {
        return Err("a perturbation left every later logit unchanged; the check is vacuous".into());
    }
    Ok(format!("150 perturbations over k=1,2,10; max earlier change {worst:.1e}, min later change {least_future:.1e}"))
}

fn gradients() -> Result<String, String> {
    let checks = [
        gradcheck::lstm(24),
        gradcheck::residual(24),
        gradcheck::masked_conv(24),
        gradcheck::se(24),
        gradcheck::projection(24),
    ];
    let detail: Vec<String> = checks.iter().map(|c| format!("{} {:.1e}", c.name, c.max_rel)).collect();
    let detail = format!("{} coords each; {}", checks[0].coords, detail.join(", "));
    if checks.iter().all(|c| c.coords >= 20 && c.max_rel < 1e-4) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn se_row(rng: &mut ChaCha8Rng, t_c: usize, d: usize, scale: f32, zero: bool) -> Vec<f32> {
    let mut store = ParamStore::new();
    let p = SeParams::init(&mut store, "se", t_c, d, rng);
    let ids: Vec<_> = store.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        store
            .get_mut(id)
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = if zero { 0.0 } else { rng.random_range(-scale..scale) });
    }
    let f: Vec<f32> = (0..t_c * d).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut g = Graph::new();
    let fv = g.constant(&Tensor::new([1, t_c, d], f).unwrap()).unwrap();
    let w = se_weights(&mut g, &store, &p, fv).unwrap();
    g.value(w).to_vec()
}

fn energies() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    for i in 0..10_000 {
        let t_c = rng.random_range(2..=64);
        let d = rng.random_range(1..=8);
        let scale = [0.1, 1.0, 10.0][i % 3];
        let w = se_row(&mut rng, t_c, d, scale, false);
        let (e_v, e_a) = activation_energies(&w, rng.random_range(0..=t_c));
        let low = 1.0 / t_c as f64 - (e_v + e_a);
        let high = e_v + e_a - 1.0;
        worst = worst.max(low).max(high);
        if low > 1e-9 || high > 1e-9 {
            return Err(format!("trial {i}: T_c={t_c}, e_v+e_a={} (bounds [{}, 1])", e_v + e_a, 1.0 / t_c as f64));
        }
    }
    let mut uniform = 0.0f64;
    for t_c in 2..=64 {
        let w = se_row(&mut rng, t_c, 3, 0.0, true);
        let (e_v, e_a) = activation_energies(&w, t_c / 3);
        uniform = uniform.max((e_v + e_a - 1.0 / t_c as f64).abs());
    }
    let mut one_hot = 0.0f64;
    for t_c in 2..=64 {
        let mut w = vec![0.0f32; t_c];
        w[rng.random_range(0..t_c)] = 1.0;
        let (e_v, e_a) = activation_energies(&w, rng.random_range(0..=t_c));
        one_hot = one_hot.max((e_v + e_a - 1.0).abs());
    }
    if uniform >= 1e-9 || one_hot >= 1e-6 {
        return Err(format!("uniform off by {uniform:.1e}, one-hot off by {one_hot:.1e}"));
    }
    Ok(format!(
        "10000 SE rows, worst bound excess {worst:.1e}; uniform |e-1/T_c| {uniform:.1e}; one-hot |e-1| {one_hot:.1e}"
    ))
}

fn overfit(ws: &Workspace) -> Result<String, String> {
    let start = Instant::now();
    mmcap(&["make-synthetic", "--out-dir", &ws.s("syn7"), "--clips", "8", "--seed", "7"])?;
    let manifest = ws.s("syn7/manifest.json");
    mmcap(&["build-vocab", "--manifest", &manifest, "--out", &ws.s("vocab.json")])?;
    let cfg = toy_config(ws)?;
    let out = mmcap(&["train", "--config", &cfg, "--manifest", &manifest, "--vocab", &ws.s("vocab.json"), "--out-dir", &ws.s("toy")])?;
    let summary: TrainSummary = serde_json::from_str(out.trim()).map_err(|e| format!("summary: {e}"))?;
    mmcap(&["caption", "--checkpoint", &ws.s("toy/model.mmck"), "--manifest", &manifest, "--split", "train", "--out", &ws.s("toy/captions.json")])?;
    let elapsed = start.elapsed();
    let captions: Vec<CaptionLine> = serde_json::from_str(&read(&ws.path("toy/captions.json"))?).map_err(|e| e.to_string())?;
    let m = Manifest::load(&ws.path("syn7/manifest.json")).map_err(|e| e.to_string())?;
    let exact = captions.iter().filter(|c| m.get(&c.id).is_some_and(|r| r.captions[0] == c.caption)).count();
    let detail = format!(
        "{} epochs, accuracy {:.3}, train loss {:.2e}, {exact}/8 captions exact, {:.0} s",
        summary.epochs,
        summary.train_accuracy,
        summary.final_train_loss,
        elapsed.as_secs_f64()
    );
    if summary.epochs <= EPOCHS && summary.train_accuracy == 1.0 && exact == 8 && captions.len() == 8 && elapsed < Duration::from_secs(300) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn attribution(ws: &Workspace) -> Result<String, String> {
    let ckpt = ws.path("toy/model.mmck");
    if !ckpt.exists() {
        return Err("no toy checkpoint (criterion 4 did not train)".into());
    }
    mmcap(&["make-synthetic", "--out-dir", &ws.s("syn8"), "--clips", "32", "--seed", "8", "--split", "test"])?;
    mmcap(&[
        "explain", "--checkpoint", &ckpt.display().to_string(), "--manifest", &ws.s("syn8/manifest.json"), "--split", "test",
        "--out", &ws.s("explain8.jsonl"), "--lexicon", &ws.s("syn8/lexicon.json"), "--html", &ws.s("explain8.html"),
    ])?;
    let (model, _) = checkpoint::load(&ckpt).map_err(|e| e.to_string())?;
    let t_c = model.config.t_c();
    let (mut visual, mut audio) = ((0, 0), (0, 0));
    let mut lines = 0;
    for line in read(&ws.path("explain8.jsonl"))?.lines() {
        let r: AttributionReport = serde_json::from_str(line).map_err(|e| e.to_string())?;
        r.check(t_c)?;
        lines += 1;
        for e in r.lexicon.unwrap_or_default() {
            let d = e.attribution.decision;
            match e.cue.as_str() {
                "visual" => visual = (visual.0 + (d == Decision::Visual) as usize, visual.1 + 1),
                _ => audio = (audio.0 + (d == Decision::Audio) as usize, audio.1 + 1),
            }
        }
    }
    let frac = |(k, n): (usize, usize)| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let detail = format!(
        "{lines} clips; visual-cued {}/{} visual, audio-cued {}/{} audio",
        visual.0, visual.1, audio.0, audio.1
    );
    if lines == 32 && frac(visual) >= 0.9 && frac(audio) >= 0.9 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn metric_oracles() -> Result<String, String> {
    let identity = oracles::corpus(&[("x", "a man is singing a song", &["a man is singing a song"])]);
    let b = bleu4(&identity).map_err(|e| e.to_string())?;
    let clip = oracles::corpus(&[("x", "the the the the the the the", &["the cat is on the mat"])]);
    let (num, den) = clipped_precision(&clip, 1);
    let p = num as f64 / den as f64;
    let r = rouge_l(&oracles::corpus(&[("x", "a b c d", &["a c b d"])])).map_err(|e| e.to_string())?;
    let c = cider(&oracles::corpus(&oracles::THREE_CLIPS)).map_err(|e| e.to_string())?;
    let want = oracles::dense_cider(&oracles::THREE_CLIPS);
    let detail = format!("bleu4 {b}, clipped {num}/{den}, rouge_l {r}, cider {c:.9} vs oracle {want:.9}");
    if b == 1.0 && (p - 2.0 / 7.0).abs() < 1e-9 && (r - 0.75).abs() < 1e-9 && (c - want).abs() < 1e-6 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn ablation(ws: &Workspace) -> Result<String, String> {
    let vocab = ws.path("vocab.json");
    if !vocab.exists() {
        return Err("no toy data (criterion 4 did not run)".into());
    }
    let manifest = ws.s("syn7/manifest.json");
    let cfg = toy_config(ws)?;
    let mut rows = Vec::new();
    for k in [5, 10, 15] {
        let dir = ws.path(&format!("ablate{k}"));
        let d = dir.display().to_string();
        let (ks, es) = (k.to_string(), ABLATION_EPOCHS.to_string());
        let out = mmcap(&[
            "train", "--config", &cfg, "--manifest", &manifest, "--vocab", &vocab.display().to_string(), "--out-dir", &d, "--blocks", &ks,
            "--epochs", &es,
        ])?;
        let s: TrainSummary = serde_json::from_str(out.trim()).map_err(|e| e.to_string())?;
        let caps = format!("{d}/captions.json");
        let metrics = format!("{d}/metrics.json");
        mmcap(&["caption", "--checkpoint", &format!("{d}/model.mmck"), "--manifest", &manifest, "--split", "train", "--out", &caps])?;
        mmcap(&["eval", "--candidates", &caps, "--manifest", &manifest, "--split", "train", "--out", &metrics])?;
        let m: serde_json::Value = serde_json::from_str(&read(Path::new(&metrics))?).map_err(|e| e.to_string())?;
        let row = serde_json::json!({
            "k": k, "epochs": s.epochs, "train_loss": s.final_train_loss, "accuracy": s.train_accuracy,
            "bleu4": m["bleu4"], "rouge_l": m["rouge_l"], "cider": m["cider"],
        });
        println!("    ablation {row}");
        rows.push(row.to_string());
    }
    std::fs::write(ws.path("ablation.jsonl"), rows.join("\n") + "\n").map_err(|e| e.to_string())?;
    Ok(format!("k=5,10,15 trained {ABLATION_EPOCHS} epochs each and evaluated"))
}

fn round_trips(ws: &Workspace) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (rows, cols) in [(1, 1), (3, 7), (40, 16)] {
        let values = (0..rows * cols).map(|_| rng.random_range(-1e3f32..1e3)).collect();
        let m = FeatureMatrix::new(rows, cols, values).map_err(|e| e.to_string())?;
        let (p, q) = (ws.path("rt.mmcf"), ws.path("rt2.mmcf"));
        m.save(&p).map_err(|e| e.to_string())?;
        let back = mmcap::dataio::load_feature_matrix(&p).map_err(|e| e.to_string())?;
        back.save(&q).map_err(|e| e.to_string())?;
        if back != m || std::fs::read(&p).ok() != std::fs::read(&q).ok() {
            return Err(format!("MMCF {rows}x{cols} changed on round trip"));
        }
    }
    let model = random_model(3, 99);
    let vocab = Vocabulary::build(&["w0 w1 w2 w3 w4 w5 w6 w7"], 1);
    let path = ws.path("rt.mmck");
    checkpoint::save(&path, &model, &vocab).map_err(|e| e.to_string())?;
    let (loaded, v2) = checkpoint::load(&path).map_err(|e| e.to_string())?;
    let c = &model.config;
    let v = Tensor::full([1, c.t_v, c.visual_dim], 0.25);
    let a = Tensor::full([1, c.t_a, c.audio_dim], -0.5);
    let tokens = [SOS, 5, 9, 4, 11];
    let bits = |m: &Model| eval_logits(m, &v, &a, &tokens).iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    if v2 != vocab || bits(&model) != bits(&loaded) {
        return Err("checkpoint logits differ after reload".into());
    }
    Ok("MMCF save/load/save byte-identical (3 shapes); checkpoint eval logits bitwise equal".into())
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let ws = Workspace {
        root: tmp.path().to_owned(),
        _tmp: tmp,
    };
    let criteria: [(&str, &dyn Fn() -> Result<String, String>); 8] = [
        ("autoregressivity", &autoregressive),
        ("gradients", &gradients),
        ("energy invariants", &energies),
        ("toy overfit", &|| overfit(&ws)),
        ("modality attribution", &|| attribution(&ws)),
        ("metric oracles", &metric_oracles),
        ("block ablation", &|| ablation(&ws)),
        ("round trips", &|| round_trips(&ws)),
    ];
    let limits = [Some(60), Some(120), None, Some(300), None, None, None, None];
    let mut failed = 0;
    for (i, ((name, run), limit)) in criteria.iter().zip(limits).enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        let result = match (result, limit) {
            (Ok(d), Some(l)) if secs >= l as f64 => Err(format!("{d}; took {secs:.1} s, limit {l} s")),
            (r, _) => r,
        };
        let (status, detail) = match result {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {} {name}: {status} ({detail}; {secs:.1} s)", i + 1);
    }
    if failed > 0 {
        println!("{failed} of 8 criteria failed");
        std::process::exit(1);
    }
    println!("all 8 criteria passed");
}
