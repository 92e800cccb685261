use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use econv::{ParamStore64, Tensor64};

const NET: &str = "\
input 20 20 1
conv conv1 k=3x3 out=3 stride=1 pad=0
relu relu1
pool pool2 k=2x2 stride=2 pad=0
conv conv3 k=3x3 out=3 stride=1 pad=0
pool pool4 k=2x2 stride=2 pad=0
conv conv5 k=3x3 out=3 stride=1 pad=0
";

fn econv(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_econv")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    net: std::path::PathBuf,
    dense: std::path::PathBuf,
    data: std::path::PathBuf,
    params: std::path::PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let net = root.join("net.txt");
    fs::write(&net, NET).unwrap();
    let dense = root.join("dense.txt");
    let o = econv(&["densify", s(&net), "--from-pool", "pool2", "-o", s(&dense)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert_eq!(stdout(&o), "grid_stride=4\n");
    let data = root.join("data");
    let o = econv(&["gen", s(&data), "--count", "6", "--size", "20", "--seed", "5"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let params = root.join("p.eprm");
    let o = econv(&["train", s(&net), s(&data), "--epochs", "2", "--lr", "0.1", "--seed", "1", "-o", s(&params)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    Fixture { _dir: dir, net, dense, data, params }
}

#[test]
fn verify_fresh_densification() {
    let f = fixture();
    let o = econv(&["verify", s(&f.net), s(&f.dense), s(&f.params), "--seed", "3", "--input-size", "28"]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let line = stdout(&o);
    assert!(line.starts_with("equiv S=4 pos=9 maxdiff=0e0 exact=1 pass=1"), "{line}");
}

#[test]
fn verify_failure_exits_one() {
    let f = fixture();
    let mut p = ParamStore64::from_bytes(&fs::read(&f.params).unwrap()).unwrap();
    p.get_mut("conv5.weight").unwrap().data_mut()[0] = f64::NAN;
    fs::write(&f.params, p.to_bytes()).unwrap();
    let o = econv(&["verify", s(&f.net), s(&f.dense), s(&f.params), "--seed", "3"]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    assert!(stdout(&o).contains("pass=0"));
}

#[test]
fn train_logs_and_eval() {
    let f = fixture();
    let out = f.params.with_extension("again");
    let o = econv(&["train", s(&f.net), s(&f.data), "--epochs", "3", "--lr", "0.1", "--seed", "1", "-o", s(&out)]);
    let lines: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 3);
    for (i, l) in lines.iter().enumerate() {
        let rest = l.strip_prefix(&format!("epoch={} loss=", i + 1)).unwrap();
        assert!(rest.parse::<f64>().unwrap().is_finite());
    }
    let o = econv(&["eval", s(&f.net), s(&out), s(&f.data)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    assert!(stdout(&o).starts_with("pixel_accuracy="));
    assert!(stdout(&o).contains(" mean_iou="));
}

#[test]
fn transfer_then_eval_on_original() {
    let f = fixture();
    let tuned = f.params.with_extension("dense");
    let o = econv(&[
        "train", s(&f.dense), s(&f.data), "--epochs", "1", "--lr", "0.05", "--seed", "2",
        "--init", s(&f.params), "-o", s(&tuned),
    ]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
    let dpoa = f.params.with_extension("dpoa");
    assert_eq!(econv(&["transfer", s(&tuned), s(&f.net), "-o", s(&dpoa)]).status.code(), Some(0));
    let o = econv(&["eval", s(&f.net), s(&dpoa), s(&f.data)]);
    assert_eq!(o.status.code(), Some(0), "{o:?}");
}

#[test]
fn usage_errors_exit_two() {
    let f = fixture();
    let bad = f.net.with_extension("bad");
    let o = econv(&["densify", s(&f.net), "--from-pool", "conv1", "-o", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!bad.exists());

    fs::write(&bad, "input 8 8 1\nconvv c1 k=3x3 out=1 stride=1 pad=0\n").unwrap();
    let o = econv(&["rf", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 2"));

    let o = econv(&["verify", s(&f.net), s(&f.dense), s(&f.params), "--seed", "1", "--tolerance", "-1"]);
    assert_eq!(o.status.code(), Some(2));
    let o = econv(&["verify", s(&f.net), s(&f.net), s(&f.params)]);
    assert_eq!(o.status.code(), Some(2));
    let o = econv(&["transfer", s(&f.params), s(&bad), "-o", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(econv(&["nonsense"]).status.code(), Some(2));
}

#[test]
fn rf_report() {
    let f = fixture();
    let o = econv(&["rf", s(&f.net)]);
    let last = stdout(&o).lines().last().unwrap().to_string();
    assert_eq!(last, "layer=conv5 out=1x1x3 size=18x18 step=4x4 offset=0,0");
}

#[test]
fn gen_writes_pairs() {
    let f = fixture();
    let img = Tensor64::from_bytes(&fs::read(f.data.join("sample_0005.img.eten")).unwrap()).unwrap();
    assert_eq!(img.dims().to_string(), "20x20x1");
    assert!(f.data.join("sample_0005.lbl.eten").exists());
}
