//! The command-line pipeline on a miniature config, end to end, in a
//! temporary directory.
//!
//! cargo run --release --example cli_pipeline

use shapeprior::cli::main_with_args;

const CONFIG: &str = r#"
mode = "cgce"
shots = [1, 5]

[dataset]
resolution = 8
image_size = 8
n_views = 4
n_per_class = 8

[model.encoder]
image_size = 8
channels = [4, 8]
embed_dim = 16

[model.decoder]
resolution = 8
fc_channels = 8
up_channels = [8, 4]
refine_channels = []

[train]
epochs = 10
"#;

fn main() {
    let dir = tempfile::tempdir().expect("temporary directory");
    let cfg = dir.path().join("experiment.toml");
    std::fs::write(&cfg, CONFIG).expect("write config");
    let root = dir.path().display().to_string();
    let steps: [&[&str]; 10] = [
        &["gen-data"],
        &["--mode", "zero", "train-base"],
        &["train-base"],
        &["adapt"],
        &["--mode", "zero", "eval"],
        &["eval"],
        &["oracle"],
        &["proximity"],
        &["ablate"],
        &["report"],
    ];
    for step in steps {
        println!("$ shapeprior {}", step.join(" "));
        let mut args = vec!["shapeprior".to_string(), "--config".into(), cfg.display().to_string()];
        for (flag, sub) in [("--data", "data"), ("--checkpoints", "ckpt"), ("--output", "out")] {
            args.extend([flag.to_string(), format!("{root}/{sub}")]);
        }
        args.extend(step.iter().map(|s| s.to_string()));
        let code = main_with_args(args);
        if code != 0 {
            std::process::exit(code);
        }
    }
}
