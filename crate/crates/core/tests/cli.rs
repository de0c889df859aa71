use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use audiosplat::cli::{ckpt_config_path, default_history_path, fresh_field};
use audiosplat::field::{load_checkpoint, save_checkpoint};
use audiosplat::metrics::MetricReport;
use audiosplat::render::render;
use audiosplat::scene_io::{load_scene, load_wav, save_wav, RunConfig};
use audiosplat::spectral::{istft, stft, ComplexSpectrogram, Waveform};
use num_complex::Complex64;
use tempfile::TempDir;

fn bin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_audiosplat"))
        .args(args)
        .output()
        .expect("spawn audiosplat")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, seed: u64) {
    let out = bin(&["synth", "--out", s(dir), "--poses", "8", "--seed", &seed.to_string()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

/// Short, cheap run config for the scene in `dir`.
fn quick_config(dir: &Path, epochs: usize) -> PathBuf {
    let mut cfg = RunConfig::load(&dir.join("config.toml")).unwrap();
    cfg.scene.clip_seconds = 0.5;
    cfg.train.epochs = epochs;
    let path = dir.join("quick.toml");
    cfg.save(&path).unwrap();
    path
}

fn sorted_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn synth_writes_scene_deterministically() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    synth(a.path(), 3);
    synth(b.path(), 3);
    let files = sorted_files(a.path());
    let wavs = files.iter().filter(|(n, _)| n.ends_with(".wav")).count();
    assert_eq!(wavs, 8);
    assert!(files.iter().any(|(n, _)| n == "poses.txt"));
    assert!(files.iter().any(|(n, _)| n == "meta.toml"));
    assert_eq!(files, sorted_files(b.path()));
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let out = bin(&["synth", "--out", s(dir.path()), "--poses", "1"]);
    assert_eq!(out.status.code(), Some(2));
    let out = bin(&["train", "--config", "c.toml", "--out", "x.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--scene"));
    let out = bin(&["train", "--scene", "a", "--config", "b", "--out", "c", "--ablate", "xyz"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_into_unwritable_path_fails() {
    let dir = TempDir::new().unwrap();
    let file = dir.path().join("plain");
    fs::write(&file, b"x").unwrap();
    let out = bin(&["synth", "--out", s(&file.join("sub")), "--poses", "2"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_render_export_round() {
    let dir = TempDir::new().unwrap();
    let scene = dir.path().join("scene");
    synth(&scene, 1);
    let cfg = quick_config(&scene, 3);
    let ckpt = dir.path().join("field.agsf");
    let out = bin(&["train", "--scene", s(&scene), "--config", s(&cfg), "--out", s(&ckpt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ckpt_config_path(&ckpt).exists());
    let hist = fs::read_to_string(default_history_path(&ckpt)).unwrap();
    assert_eq!(hist.lines().count(), 3);

    let (w1, w2) = (dir.path().join("a.wav"), dir.path().join("b.wav"));
    for w in [&w1, &w2] {
        let out = bin(&["render", "--ckpt", s(&ckpt), "--scene", s(&scene), "--pose", "pose7", "--out", s(w)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    assert_eq!(fs::read(&w1).unwrap(), fs::read(&w2).unwrap());
    assert_eq!(load_wav(&w1).unwrap().n_channels(), 2);

    let out = bin(&["render", "--ckpt", s(&ckpt), "--scene", s(&scene), "--pose", "nowhere", "--out", s(&w1)]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("nowhere") && err.contains("pose3"), "{err}");

    let field = load_checkpoint(&ckpt).unwrap();
    let cells = field.n_bins() * field.n_frames();
    let rows = |p: &str| {
        let csv = dir.path().join(format!("p{p}.csv"));
        let out = bin(&["export", "--ckpt", s(&ckpt), "--scene", s(&scene), "--percentile", p, "--out", s(&csv)]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let text = fs::read_to_string(&csv).unwrap();
        assert!(text.starts_with("x,y,z,f,t,magnitude\n"));
        text.lines().count() - 1
    };
    assert_eq!(rows("0"), cells);
    assert!(rows("50").abs_diff(cells / 2) <= 1);
}

#[test]
fn ablated_phase_correction_renders_zero_shift() {
    let dir = TempDir::new().unwrap();
    let scene_dir = dir.path().join("scene");
    synth(&scene_dir, 2);
    let cfg_path = quick_config(&scene_dir, 1);
    let ckpt = dir.path().join("nopc.agsf");
    let out = bin(&[
        "train", "--scene", s(&scene_dir), "--config", s(&cfg_path), "--out", s(&ckpt), "--ablate", "pc",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let cfg = RunConfig::load(&ckpt_config_path(&ckpt)).unwrap();
    assert!(!cfg.train.toggles.phase_correction);
    let field = load_checkpoint(&ckpt).unwrap();
    let scene = load_scene(&scene_dir, &cfg).unwrap();
    let s_src = stft(&scene.source_clip, &scene.stft).unwrap();
    let pose = scene.pose("pose3").unwrap();
    let r = render(&field, &s_src, &pose, cfg.train.toggles, &cfg.field).unwrap();
    assert!(r.dphi_l.data.iter().chain(&r.dphi_r.data).all(|&v| v == 0.0));
}

#[test]
fn fresh_checkpoint_at_reference_reexpands_source() {
    let dir = TempDir::new().unwrap();
    let scene_dir = dir.path().join("scene");
    synth(&scene_dir, 4);
    let cfg = RunConfig::load(&scene_dir.join("config.toml")).unwrap();
    let scene = load_scene(&scene_dir, &cfg).unwrap();
    let ckpt = dir.path().join("fresh.agsf");
    save_checkpoint(&fresh_field(&scene, &cfg).unwrap(), &ckpt).unwrap();
    let wav = dir.path().join("ref.wav");
    let out = bin(&["render", "--ckpt", s(&ckpt), "--scene", s(&scene_dir), "--pose", "pose0", "--out", s(&wav)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let src = stft(&scene.source_clip, &scene.stft).unwrap();
    let (l, r) = (src.channel(0), src.channel(1));
    let amp: Vec<f64> = l.iter().zip(r).map(|(a, b)| 0.5 * (a.norm() + b.norm())).collect();
    let ch = |c: &[Complex64]| -> Vec<Complex64> {
        c.iter().zip(&amp).map(|(z, &a)| Complex64::from_polar(a, z.arg())).collect()
    };
    let expect = istft(&ComplexSpectrogram::new(*src.grid(), src.n_samples(), vec![ch(l), ch(r)]).unwrap()).unwrap();
    let got = load_wav(&wav).unwrap();
    let err = (0..2)
        .flat_map(|c| got.channel(c).iter().zip(expect.channel(c)).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max);
    assert!(err < 1e-5, "max error {err}");
}

#[test]
fn eval_reports() {
    let dir = TempDir::new().unwrap();
    let n = 8000;
    let l: Vec<f64> = (0..n).map(|i| (i as f64 * 0.05).sin() * 0.3).collect();
    let r: Vec<f64> = (0..n).map(|i| (i as f64 * 0.031).cos() * 0.2).collect();
    let x = Waveform::stereo(16000, l.clone(), r.clone()).unwrap();
    let loud = Waveform::stereo(16000, l.iter().map(|v| v * 10f64.sqrt()).collect(), r.clone()).unwrap();
    let short = Waveform::stereo(16000, l[..n - 10].to_vec(), r[..n - 10].to_vec()).unwrap();
    let paths: Vec<PathBuf> = ["x", "loud", "short"].iter().map(|p| dir.path().join(format!("{p}.wav"))).collect();
    for (w, p) in [&x, &loud, &short].into_iter().zip(&paths) {
        save_wav(w, p).unwrap();
    }
    let report = dir.path().join("report.txt");
    let run = |pred: &Path| bin(&["eval", "--pred", s(pred), "--ref", s(&paths[0]), "--out", s(&report)]);

    assert!(run(&paths[0]).status.success());
    let rep = MetricReport::parse(&fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep, MetricReport { mag: 0.0, env: 0.0, lre_db: 0.0 });

    assert!(run(&paths[1]).status.success());
    let rep = MetricReport::parse(&fs::read_to_string(&report).unwrap()).unwrap();
    assert!((rep.lre_db - 10.0).abs() < 1e-5, "{}", rep.lre_db);

    assert_eq!(run(&paths[2]).status.code(), Some(1));
}
