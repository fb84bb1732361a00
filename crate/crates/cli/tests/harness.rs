//! Harness-level integration: declared output files, mode equivalences, and
//! the three binaries exercised as real processes (including TCP).

use std::io::BufRead;
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::OnceLock;

use splitstream_cli::{run_experiment, ExperimentConfig};
use splitstream_core::{derive_seed, fit, LossKind, Model32, Tensor32, TrainCfg};
use splitstream_runtime::synth;

fn workdir(tag: &str) -> PathBuf {
    let dir =
        std::env::temp_dir().join(format!("splitstream-harness-{}-{tag}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn cls_data() -> &'static PathBuf {
    static DIR: OnceLock<PathBuf> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = workdir("data").join("cls");
        synth::write_classification_dataset(&dir, 120, 9).unwrap();
        dir
    })
}

fn config(seed: u64, extra: &str, out: &PathBuf) -> ExperimentConfig {
    let text = format!(
        "model = \"covid_cnn\"\nscale = \"1/4\"\nseed = {seed}\n{extra}\ndata = {:?}\nout = {:?}\n\
         epochs = 4\nbatch = 32\nlearning_rate = 0.1\n",
        cls_data().display(),
        out.display(),
    );
    ExperimentConfig::from_toml_str(&text).unwrap()
}

#[test]
fn spatio_run_emits_every_declared_file() {
    let out = workdir("files");
    let cfg = config(7, "mode = \"spatio_temporal\"", &out);
    run_experiment(&cfg).unwrap();
    for name in [
        "metrics.json",
        "per_sample_losses.csv",
        "cdf.csv",
        "pdf.csv",
        "epochs.csv",
        "manifest.csv",
        "weights.bin",
        "features/original.pgm",
        "features/privacy_layer.pgm",
    ] {
        assert!(out.join(name).is_file(), "missing {name}");
    }
    let manifest = std::fs::read_to_string(out.join("manifest.csv")).unwrap();
    // 120 samples -> 96-sample pool over three shards.
    assert_eq!(manifest.lines().count(), 97);
    let epochs = std::fs::read_to_string(out.join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().next().unwrap(), "epoch,loss,accuracy");
    assert_eq!(epochs.lines().count(), 5);
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn single_client_of_everything_equals_spatio_with_one_shard() {
    let out_a = workdir("eq-single");
    let out_b = workdir("eq-spatio");
    let single = config(
        11,
        "mode = \"single_client\"\nsingle_fraction = 1.0",
        &out_a,
    );
    let spatio = config(11, "mode = \"spatio_temporal\"\nclient_ratios = [1.0]", &out_b);
    run_experiment(&single).unwrap();
    run_experiment(&spatio).unwrap();
    let metrics_a = std::fs::read(out_a.join("metrics.json")).unwrap();
    let metrics_b = std::fs::read(out_b.join("metrics.json")).unwrap();
    // The reports only differ in the mode label.
    let text_a = String::from_utf8(metrics_a).unwrap().replace("single_client", "spatio_temporal");
    assert_eq!(text_a, String::from_utf8(metrics_b).unwrap());
    assert_eq!(
        std::fs::read(out_a.join("weights.bin")).unwrap(),
        std::fs::read(out_b.join("weights.bin")).unwrap()
    );
    std::fs::remove_dir_all(&out_a).ok();
    std::fs::remove_dir_all(&out_b).ok();
}

#[test]
fn degenerate_fedavg_is_sequential_training() {
    // One client holding everything: each round's average is just that
    // client's locally trained model, so FedAvg-lite must reproduce plain
    // sequential training with the same per-round shuffle streams.
    let out = workdir("fed1");
    let cfg = config(
        13,
        "mode = \"fedavg_lite\"\nfedavg_rounds = 2\nfedavg_local_epochs = 2\nclient_ratios = [1.0]",
        &out,
    );
    let artifacts = run_experiment(&cfg).unwrap();

    let samples = splitstream_cli::load_samples(&cfg).unwrap();
    let partition = splitstream_cli::split_dataset(samples.len(), &[1.0], 0.1, 0.1, 13).unwrap();
    let pairs: Vec<(Tensor32, Tensor32)> = partition.client_shards[0]
        .iter()
        .map(|&i| {
            (
                samples[i].features.clone(),
                Tensor32::new(vec![1], vec![samples[i].label]).unwrap(),
            )
        })
        .collect();
    let spec = cfg.model_spec().unwrap();
    let mut manual: Model32 = spec.materialize().unwrap();
    for round in 0..2u64 {
        let train_cfg = TrainCfg {
            epochs: 2,
            batch: 32,
            learning_rate: 0.1,
            loss: LossKind::BinaryCrossentropy,
            shuffle_seed: derive_seed(13, "fedavg-shuffle", &[round, 0]),
            classification: true,
            freeze_layers: 0,
        };
        fit(&mut manual, &pairs, &train_cfg).unwrap();
    }
    assert_eq!(artifacts.composed, manual);
    std::fs::remove_dir_all(&out).ok();
}

#[test]
fn compare_command_joins_runs() {
    let out_a = workdir("cmp-a");
    let out_b = workdir("cmp-b");
    run_experiment(&config(3, "mode = \"spatio_temporal\"", &out_a)).unwrap();
    run_experiment(&config(3, "mode = \"single_client\"\nsingle_fraction = 0.5", &out_b)).unwrap();
    let cmp_out = workdir("cmp-out");
    let table = splitstream_cli::run_compare(
        &[out_a.join("metrics.json"), out_b.join("metrics.json")],
        &cmp_out,
    )
    .unwrap();
    assert!(table.contains("spatio_temporal"));
    assert!(table.contains("single_client"));
    let final_csv = std::fs::read_to_string(cmp_out.join("compare_final.csv")).unwrap();
    assert_eq!(final_csv.lines().count(), 3);
    assert!(cmp_out.join("compare_curves.csv").is_file());
    for d in [&out_a, &out_b, &cmp_out] {
        std::fs::remove_dir_all(d).ok();
    }
}

// --- the binaries as real processes ----------------------------------------

#[test]
fn harness_binary_respects_out_root_env() {
    let root = workdir("bin-env");
    let data = root.join("cls");
    let status = Command::new(env!("CARGO_BIN_EXE_splitstream"))
        .args(["gen-data", "--task", "cls", "--n", "60", "--seed", "5", "--out"])
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());

    let cfg_path = root.join("exp.toml");
    std::fs::write(
        &cfg_path,
        format!(
            "model = \"covid_cnn\"\nscale = \"1/4\"\nseed = 2\ndata = {:?}\nout = \"nested/run\"\n\
             epochs = 2\nbatch = 16\nlearning_rate = 0.1\n",
            data.display()
        ),
    )
    .unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_splitstream"))
        .args(["run", "--config"])
        .arg(&cfg_path)
        .env("SPLITSTREAM_OUT", &root)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(root.join("nested/run/metrics.json").is_file());
    std::fs::remove_dir_all(&root).ok();
}

#[test]
fn client_and_server_binaries_train_over_tcp() {
    let root = workdir("bin-tcp");
    // Three hospitals, each with its own local directory of both classes.
    let mut client_dirs = Vec::new();
    for (i, n) in [(0u32, 30usize), (1, 20), (2, 10)] {
        let dir = root.join(format!("hospital{i}"));
        synth::write_classification_dataset(&dir, n, 100 + i as u64).unwrap();
        client_dirs.push(dir);
    }
    let cfg_path = root.join("exp.toml");
    std::fs::write(
        &cfg_path,
        format!(
            "model = \"covid_cnn\"\nscale = \"1/4\"\nseed = 6\ndata = {:?}\nout = {:?}\n\
             epochs = 2\nbatch = 16\nlearning_rate = 0.1\n",
            client_dirs[0].display(),
            root.join("unused").display()
        ),
    )
    .unwrap();

    let server_out = root.join("server");
    let mut server = Command::new(env!("CARGO_BIN_EXE_splitstream-server"))
        .args(["--listen", "127.0.0.1:0", "--expect-clients", "3", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&server_out)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut reader = std::io::BufReader::new(server.stdout.take().unwrap());
    let mut first_line = String::new();
    reader.read_line(&mut first_line).unwrap();
    let addr = first_line.trim().strip_prefix("listening on ").unwrap().to_string();

    let clients: Vec<_> = client_dirs
        .iter()
        .enumerate()
        .map(|(i, dir)| {
            Command::new(env!("CARGO_BIN_EXE_splitstream-client"))
                .args(["--server", &addr, "--client-id", &i.to_string(), "--config"])
                .arg(&cfg_path)
                .arg("--data")
                .arg(dir)
                .spawn()
                .unwrap()
        })
        .collect();
    for mut c in clients {
        assert!(c.wait().unwrap().success());
    }
    assert!(server.wait().unwrap().success());

    assert!(server_out.join("weights.bin").is_file());
    assert!(server_out.join("epochs.csv").is_file());
    let manifest = std::fs::read_to_string(server_out.join("manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 61, "30+20+10 records plus header");
    std::fs::remove_dir_all(&root).ok();
}

#[test]
fn client_with_wrong_seed_is_rejected() {
    let root = workdir("bin-reject");
    let data = root.join("cls");
    synth::write_classification_dataset(&data, 20, 3).unwrap();
    let cfg_path = root.join("exp.toml");
    std::fs::write(
        &cfg_path,
        format!(
            "model = \"covid_cnn\"\nscale = \"1/4\"\nseed = 8\ndata = {:?}\nout = {:?}\n",
            data.display(),
            root.join("unused").display()
        ),
    )
    .unwrap();

    let server_out = root.join("server");
    let mut server = Command::new(env!("CARGO_BIN_EXE_splitstream-server"))
        .args(["--listen", "127.0.0.1:0", "--expect-clients", "1", "--config"])
        .arg(&cfg_path)
        .arg("--out")
        .arg(&server_out)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut reader = std::io::BufReader::new(server.stdout.take().unwrap());
    let mut first_line = String::new();
    reader.read_line(&mut first_line).unwrap();
    let addr = first_line.trim().strip_prefix("listening on ").unwrap().to_string();

    // Mismatched experiment seed: different privacy-layer weights, so the
    // config digest differs and the handshake must be rejected.
    let status = Command::new(env!("CARGO_BIN_EXE_splitstream-client"))
        .args(["--server", &addr, "--client-id", "0", "--seed", "9999", "--config"])
        .arg(&cfg_path)
        .arg("--data")
        .arg(&data)
        .status()
        .unwrap();
    assert!(!status.success(), "client with mismatched seed must fail");

    // The matching client completes the run so the server can exit cleanly.
    let status = Command::new(env!("CARGO_BIN_EXE_splitstream-client"))
        .args(["--server", &addr, "--client-id", "0", "--config"])
        .arg(&cfg_path)
        .arg("--data")
        .arg(&data)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(server.wait().unwrap().success());
    std::fs::remove_dir_all(&root).ok();
}
