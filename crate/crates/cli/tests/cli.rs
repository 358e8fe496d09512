use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use lda_aqu::trainer;
use lda_aqu::{io, Rng, Shape, Tensor, UpsampleConfig};
use lda_aqu_cli::{toy_task, Cli, Command as Sub, TaskArg};

fn lda_aqu(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lda-aqu"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Dir(tempfile::TempDir);

impl Dir {
    fn new() -> Self {
        Dir(tempfile::tempdir().unwrap())
    }
    fn path(&self, name: &str) -> PathBuf {
        self.0.path().join(name)
    }
    fn arg(&self, name: &str) -> String {
        self.path(name).to_str().unwrap().to_owned()
    }
}

fn random_tensor(path: &Path, shape: Shape, seed: u64) -> Tensor {
    let t = Tensor::uniform(shape, -1.0, 1.0, &mut Rng::seed(seed));
    io::write_tensor(path, &t).unwrap();
    t
}

#[test]
fn pgm_bilinear_doubles() {
    let d = Dir::new();
    let img = Tensor::uniform(Shape::new(1, 1, 64, 64), 0.0, 1.0, &mut Rng::seed(1));
    io::write_image(d.path("in.pgm"), &img).unwrap();
    let o = lda_aqu(&[
        "upsample",
        &d.arg("in.pgm"),
        "--scale",
        "2",
        "--mode",
        "bilinear",
        "--out",
        &d.arg("out.pgm"),
    ]);
    assert!(o.status.success(), "{o:?}");
    let bytes = std::fs::read(d.path("out.pgm")).unwrap();
    assert!(bytes.starts_with(b"P5\n128 128\n255\n"));
    assert_eq!(
        io::read_image(d.path("out.pgm")).unwrap().shape(),
        Shape::new(1, 1, 128, 128)
    );
}

#[test]
fn fractional_scale_on_tensor() {
    let d = Dir::new();
    random_tensor(&d.path("x.ldat"), Shape::new(1, 8, 4, 6), 2);
    let o = lda_aqu(&[
        "upsample",
        &d.arg("x.ldat"),
        "--scale",
        "1.5",
        "--out",
        &d.arg("y.ldat"),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(
        io::read_tensor(d.path("y.ldat")).unwrap().shape(),
        Shape::new(1, 8, 6, 9)
    );
    let text = stdout(&o);
    assert!(text.contains("(1, 8, 4, 6) -> (1, 8, 6, 9)"), "{text}");
    assert!(text.contains("total"), "{text}");
}

#[test]
fn seeded_weights_reproduce_bytes() {
    let d = Dir::new();
    random_tensor(&d.path("x.ldat"), Shape::new(1, 16, 5, 5), 3);
    for (run, seed) in [("a", "7"), ("b", "7"), ("c", "8")] {
        let o = lda_aqu(&[
            "upsample",
            &d.arg("x.ldat"),
            "--seed",
            seed,
            "--mode",
            "la-aqu",
            "--out",
            &d.arg(run),
        ]);
        assert!(o.status.success(), "{o:?}");
    }
    let read = |n| std::fs::read(d.path(n)).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn tensor_output_keeps_dtype() {
    let d = Dir::new();
    let x = Tensor::uniform(Shape::new(1, 4, 3, 3), -1.0, 1.0, &mut Rng::seed(4))
        .with_dtype(lda_aqu::DType::F32);
    io::write_tensor(d.path("x.ldat"), &x).unwrap();
    let o = lda_aqu(&[
        "upsample",
        &d.arg("x.ldat"),
        "--mode",
        "nearest",
        "--out",
        &d.arg("y.ldat"),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert_eq!(
        io::read_tensor(d.path("y.ldat")).unwrap().dtype(),
        lda_aqu::DType::F32
    );
}

#[test]
fn image_notice_for_attention_modes() {
    let d = Dir::new();
    io::write_image(d.path("in.ppm"), &Tensor::full(Shape::new(1, 3, 6, 5), 0.5)).unwrap();
    let o = lda_aqu(&["upsample", &d.arg("in.ppm"), "--out", &d.arg("out.ppm")]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("notice"));
    let out = io::read_image(d.path("out.ppm")).unwrap();
    assert_eq!(out.shape(), Shape::new(1, 3, 12, 10));
}

#[test]
fn usage_errors_exit_2() {
    let d = Dir::new();
    random_tensor(&d.path("x.ldat"), Shape::new(1, 8, 4, 4), 5);
    std::fs::write(d.path("junk"), b"hello").unwrap();
    let x = d.arg("x.ldat");
    let out = d.arg("y.ldat");
    let cases: Vec<Vec<&str>> = vec![
        vec!["upsample", &x, "--out", &out, "--frobnicate"],
        vec!["upsample", &x, "--out", &out, "--mode", "cubic"],
        vec!["upsample", &x, "--out", &out, "--scale", "0.5"],
        vec!["upsample", &x, "--out", &out, "--reduction", "16"],
        vec!["upsample", &x, "--out", &out, "--theta", "-1"],
        vec!["upsample", &x],
        vec!["upsample", "/nonexistent/file", "--out", &out],
        vec!["upsample", "junk", "--out", &out],
        vec!["offsets", &x, "--mode", "la-aqu", "--out", &out],
        vec!["train-toy", "--lr", "-1", "--out", &out],
        vec!["frobnicate"],
    ];
    for args in cases {
        let o = lda_aqu(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {o:?}");
        assert!(!o.stderr.is_empty(), "{args:?}");
    }
    assert!(!d.path("y.ldat").exists());
}

#[test]
fn weights_must_match_flags() {
    let d = Dir::new();
    random_tensor(&d.path("x.ldat"), Shape::new(1, 8, 4, 4), 6);
    let o = lda_aqu(&["train-toy", "--steps", "2", "--out", &d.arg("loss.csv")]);
    assert!(o.status.success(), "{o:?}");
    let w = d.arg("loss.ldaw");
    let ok = lda_aqu(&[
        "upsample",
        &d.arg("x.ldat"),
        "--weights",
        &w,
        "--out",
        &d.arg("y.ldat"),
    ]);
    assert!(ok.status.success(), "{ok:?}");
    let bad = lda_aqu(&[
        "upsample",
        &d.arg("x.ldat"),
        "--weights",
        &w,
        "--theta",
        "3",
        "--out",
        &d.arg("z.ldat"),
    ]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn gradcheck_report() {
    let d = Dir::new();
    let o = lda_aqu(&["gradcheck", "--out", &d.arg("g.txt")]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let report = std::fs::read_to_string(d.path("g.txt")).unwrap();
    assert_eq!(
        report.lines().count(),
        lda_aqu::gradcheck::DiffOp::ALL.len()
    );
    assert!(report.lines().all(|l| l.ends_with("passed=true")));
}

#[test]
fn corrupted_backward_fails() {
    let o = lda_aqu(&["gradcheck", "--corrupt-backward"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("w_q"));
}

#[test]
fn bench_flops_double_with_tokens() {
    let d = Dir::new();
    let o = lda_aqu(&[
        "bench",
        "--channels",
        "8",
        "--sizes",
        "4,8,16",
        "--repeats",
        "1",
        "--out",
        &d.arg("b.csv"),
    ]);
    assert!(o.status.success(), "{o:?}");
    assert!(stdout(&o).contains("flops 1.0000"));
    let csv = std::fs::read_to_string(d.path("b.csv")).unwrap();
    let flops: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(flops.len(), 3);
    assert_eq!(flops[1], 4.0 * flops[0]);
    assert_eq!(flops[2], 4.0 * flops[1]);
}

#[test]
fn zero_init_offsets_dump() {
    let d = Dir::new();
    random_tensor(&d.path("x.ldat"), Shape::new(1, 8, 10, 7), 7);
    let o = lda_aqu(&["offsets", &d.arg("x.ldat"), "--out", &d.arg("off.csv")]);
    assert!(o.status.success(), "{o:?}");
    let rows = io::read_offset_dump(d.path("off.csv")).unwrap();
    let cfg = UpsampleConfig::default();
    assert_eq!(rows.len(), 2 * cfg.groups * cfg.stencil_points());
    assert!(rows
        .iter()
        .all(|r| r.sample_x == r.ref_x && r.sample_y == r.ref_y));
    assert!(rows
        .iter()
        .all(|r| r.query_x % 8 == 0 && r.query_y % 8 == 0));
}

#[test]
fn trained_offsets_stay_within_theta() {
    let d = Dir::new();
    let o = lda_aqu(&[
        "train-toy",
        "--task",
        "shifted",
        "--theta",
        "1.5",
        "--steps",
        "60",
        "--out",
        &d.arg("loss.csv"),
    ]);
    assert!(o.status.success(), "{o:?}");
    random_tensor(&d.path("x.ldat"), Shape::new(1, 8, 8, 8), 8);
    let o = lda_aqu(&[
        "offsets",
        &d.arg("x.ldat"),
        "--theta",
        "1.5",
        "--weights",
        &d.arg("loss.ldaw"),
        "--stride",
        "1",
        "--out",
        &d.arg("off.csv"),
    ]);
    assert!(o.status.success(), "{o:?}");
    let rows = io::read_offset_dump(d.path("off.csv")).unwrap();
    assert_eq!(rows.len(), 16 * 16 * 2 * 9);
    assert!(rows.iter().any(|r| r.sample_x != r.ref_x));
    assert!(rows
        .iter()
        .all(|r| (r.sample_x - r.ref_x).abs() <= 1.5 && (r.sample_y - r.ref_y).abs() <= 1.5));
}

fn parse(args: &[&str]) -> Cli {
    use clap::Parser;
    Cli::try_parse_from(std::iter::once("lda-aqu").chain(args.iter().copied())).unwrap()
}

#[test]
fn bilinear_task_trains_and_weights_reload() {
    let d = Dir::new();
    let args = [
        "train-toy",
        "--task",
        "bilinear",
        "--steps",
        "500",
        "--seed",
        "3",
        "--out",
        &d.arg("loss.csv"),
    ];
    let o = lda_aqu(&args);
    assert!(o.status.success(), "{o:?}");
    let losses = io::read_loss_csv(d.path("loss.csv")).unwrap();
    assert_eq!(losses.len(), 501);
    assert!(
        losses[500] < 0.05 * losses[0],
        "{} vs {}",
        losses[500],
        losses[0]
    );
    assert!(stdout(&o).contains(&format!("final loss {:?}", losses[500])));

    let Sub::TrainToy { config, toy, .. } = parse(&args).command else {
        panic!()
    };
    let task = toy_task(&config, TaskArg::Bilinear, toy).unwrap();
    let cfg = config.upsample_config();
    let weights = io::load_weights(d.path("loss.ldaw"), &cfg).unwrap();
    assert_eq!(
        trainer::evaluate(&task, &weights, &cfg, false).unwrap(),
        losses[500]
    );
}

#[test]
fn zero_lr_gives_flat_trace() {
    let d = Dir::new();
    let o = lda_aqu(&[
        "train-toy",
        "--lr",
        "0",
        "--steps",
        "5",
        "--out",
        &d.arg("loss.csv"),
    ]);
    assert!(o.status.success(), "{o:?}");
    let losses = io::read_loss_csv(d.path("loss.csv")).unwrap();
    assert_eq!(losses.len(), 6);
    assert!(losses.iter().all(|l| l.to_bits() == losses[0].to_bits()));
}

#[test]
fn divergence_exits_1_with_trace() {
    let d = Dir::new();
    let o = lda_aqu(&[
        "train-toy",
        "--value",
        "learned",
        "--theta",
        "0.25",
        "--lr",
        "1e9",
        "--steps",
        "200",
        "--out",
        &d.arg("loss.csv"),
    ]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(
        err.contains("diverged") && err.contains("loss.csv"),
        "{err}"
    );
    let trace = io::read_loss_csv(d.path("loss.csv")).unwrap();
    assert!(trace.len() >= 2);
    assert!(!d.path("loss.ldaw").exists());
}

#[test]
fn help_exits_0() {
    let o = lda_aqu(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    for cmd in ["upsample", "gradcheck", "bench", "offsets", "train-toy"] {
        assert!(stdout(&o).contains(cmd));
    }
}
