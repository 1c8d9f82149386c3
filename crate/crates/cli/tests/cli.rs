// SPDX-License-Identifier: Apache-2.0
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use litho_cfno::Grid;
use litho_io::checkpoint::{decode, encode, Entry, Stored};
use litho_io::config::RunConfig;
use litho_io::pgm::encode_binary;
use proptest::prelude::*;

const TINY: &[&str] = &[
    "designs=4",
    "ilt_iters=2",
    "epochs=1",
    "batch_size=2",
    "token_sizes=8,16",
    "modes=4,8",
    "width=4",
];

fn cfno(args: &[&str]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cfno"));
    for s in TINY {
        cmd.args(["--set", s]);
    }
    cmd.args(args).output().expect("spawn cfno")
}

fn ok(args: &[&str]) -> String {
    let out = cfno(args);
    assert!(
        out.status.success(),
        "cfno {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn blank_designs_with_blank_masks_score_zero() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("blank");
    fs::create_dir_all(data.join("designs")).unwrap();
    fs::create_dir_all(data.join("masks")).unwrap();
    let blank = encode_binary(&Grid::from_fn(128, 128, |_, _| 0u8));
    let mut manifest = "design,mask,mask_mse,provenance\n".to_string();
    for i in 0..3 {
        fs::write(data.join(format!("designs/d{i}.pgm")), &blank).unwrap();
        fs::write(data.join(format!("masks/m{i}.pgm")), &blank).unwrap();
        manifest += &format!("designs/d{i}.pgm,masks/m{i}.pgm,0,ilt\n");
    }
    fs::write(data.join("manifest.csv"), manifest).unwrap();

    let out = dir.path().join("eval");
    ok(&["eval", "--data", s(&data), "--out", s(&out)]);
    let rows = csv_rows(&out.join("eval.csv"));
    assert_eq!(rows.len(), 4);
    for r in &rows {
        assert_eq!(&r[1..4], ["0", "0", "0"], "{r:?}");
    }
}

#[test]
fn pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--out", s(&data)]);
    ok(&["ilt", "--data", s(&data)]);
    let manifest = fs::read_to_string(data.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().filter(|l| l.ends_with(",ilt")).count(), 4);

    let run = dir.path().join("lgst");
    ok(&[
        "lgst",
        "--data",
        s(&data),
        "--out",
        s(&run),
        "--rounds",
        "5",
    ]);
    assert_eq!(csv_rows(&run.join("lgst.csv")).len(), 5);
    for t in 0..=5 {
        assert!(
            run.join(format!("checkpoints/stage{t}.ckpt")).is_file(),
            "stage {t}"
        );
    }
    assert_eq!(csv_rows(&run.join("train.csv")).len(), 6);
    let restored = RunConfig::load(&run.join("run_config.txt")).unwrap();
    assert_eq!(restored.width, 4);

    let eval = dir.path().join("eval");
    let ckpt = run.join("checkpoints/stage5.ckpt");
    ok(&[
        "eval",
        "--data",
        s(&data),
        "--model",
        s(&ckpt),
        "--out",
        s(&eval),
    ]);
    let rows = csv_rows(&eval.join("eval.csv"));
    let (designs, avg) = rows.split_at(4);
    assert_eq!(avg[0][0], "average");
    for col in 1..=3 {
        let mean: f64 = designs
            .iter()
            .map(|r| r[col].parse::<f64>().unwrap())
            .sum::<f64>()
            / 4.0;
        let got: f64 = avg[0][col].parse().unwrap();
        assert!(
            (got - mean).abs() <= 1e-9 * mean.abs().max(1.0),
            "column {col}"
        );
    }
    assert!(eval.join("summary.csv").is_file());

    let compared = dir.path().join("compared");
    let reference = eval.join("eval.csv");
    ok(&[
        "eval",
        "--data",
        s(&data),
        "--reference",
        s(&reference),
        "--out",
        s(&compared),
    ]);
    let last = csv_rows(&compared.join("eval.csv")).pop().unwrap();
    assert_eq!(last[0], "ratio");
}

#[test]
fn deterministic_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["gen-data", "--out", s(&data), "--count", "2"]);
    let run = |name: &str| {
        let out = dir.path().join(name);
        ok(&[
            "--deterministic",
            "eval",
            "--data",
            s(&data),
            "--ilt",
            "--out",
            s(&out),
        ]);
        (
            fs::read(out.join("eval.csv")).unwrap(),
            fs::read(out.join("summary.csv")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn config_prints_and_rejects_unknown_keys() {
    let text = ok(&["config"]);
    let cfg = RunConfig::parse(&text).unwrap();
    assert_eq!(cfg.serialize(), text);
    assert_eq!(cfg.width, 4);

    let out = cfno(&["--set", "no_such_key=1", "config"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]:"), "{err}");

    let out = cfno(&["eval"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .starts_with("error[usage]:"));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = cfno(&[
        "eval",
        "--data",
        s(&dir.path().join("nope")),
        "--out",
        s(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8(out.stderr)
        .unwrap()
        .starts_with("error[io]:"));
}

#[test]
fn tile_opt_stitches_a_small_clip() {
    let dir = tempfile::tempdir().unwrap();
    let layout = dir.path().join("clip.txt");
    fs::write(
        &layout,
        "CANVAS 1200 1200\nRECT 160 160 96 96\nRECT 560 400 96 400\nRECT 880 880 160 96\n",
    )
    .unwrap();
    let out = dir.path().join("tiles");
    ok(&[
        "--set",
        "clip_nm=1200",
        "--set",
        "tile_nm=400",
        "--set",
        "stride_nm=200",
        "tile-opt",
        "--layout",
        s(&layout),
        "--out",
        s(&out),
    ]);
    assert_eq!(csv_rows(&out.join("tiles.csv")).len(), 25);
    let mask = fs::read(out.join("mask.pgm")).unwrap();
    assert!(mask.starts_with(b"P5\n150 150\n"));
    assert_eq!(csv_rows(&out.join("eval.csv")).len(), 2);
}

#[test]
fn render_writes_four_images() {
    let dir = tempfile::tempdir().unwrap();
    let mask = dir.path().join("mask.txt");
    fs::write(&mask, "CANVAS 512 512\nRECT 128 128 256 128\n").unwrap();
    let out = dir.path().join("render");
    ok(&["render", "--mask", s(&mask), "--out", s(&out)]);
    for name in ["mask", "aerial", "resist", "pvb"] {
        let bytes = fs::read(out.join(format!("{name}.pgm"))).unwrap();
        assert!(bytes.starts_with(b"P5\n64 64\n"), "{name}");
    }
}

fn entry() -> impl Strategy<Value = Entry> {
    let dims = prop::collection::vec(1u32..4, 0..3);
    (any::<u8>(), dims, 0u8..3).prop_flat_map(|(tag, dims, kind)| {
        let n = dims.iter().product::<u32>() as usize;
        let data = match kind {
            0 => prop::collection::vec(-1e3f32..1e3, n)
                .prop_map(Stored::F32)
                .boxed(),
            1 => prop::collection::vec(prop::array::uniform2(-1e3f32..1e3), n)
                .prop_map(Stored::C32)
                .boxed(),
            _ => prop::collection::vec(any::<u32>(), n)
                .prop_map(Stored::U32)
                .boxed(),
        };
        data.prop_map(move |data| Entry {
            name: format!("t{tag}"),
            dims: dims.clone(),
            data,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoint_round_trip(entries in prop::collection::vec(entry(), 0..5)) {
        let bytes = encode(&entries).unwrap();
        prop_assert_eq!(decode(&bytes).unwrap(), entries);
    }

    #[test]
    fn config_round_trip(epochs in 1usize..100, lr in 1e-6f64..1.0, seed in any::<u64>(), holdout in prop::option::of(0usize..64)) {
        let cfg = RunConfig { epochs, lr, train_seed: seed, holdout, ..RunConfig::default() };
        prop_assert_eq!(RunConfig::parse(&cfg.serialize()).unwrap(), cfg);
    }
}
