use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use cefpn_cli::{run, write_documents, BackboneKind, Precision, RunConfig, Suite};
use cefpn_core::cost::MacConvention;
use cefpn_core::neck::SsfScheme;
use clap::Parser;

/// Run the CE-FPN neck on a synthetic backbone and report shapes, gradient
/// checks and parameter/FLOP costs.
#[derive(Parser, Debug)]
#[command(name = "cefpn", version)]
struct Args {
    /// TOML or JSON run config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Pyramid width c.
    #[arg(long)]
    base_channel: Option<usize>,
    /// a, b or c.
    #[arg(long)]
    ssf_scheme: Option<SsfScheme>,
    /// Attention bottleneck ratio.
    #[arg(long)]
    reduction: Option<usize>,
    /// Keep the F5/P5 nodes.
    #[arg(long)]
    include_f5_p5: Option<bool>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// forward, gradcheck, cost or all.
    #[arg(long)]
    suite: Option<Suite>,
    /// FLOPs per multiply-accumulate, 1 or 2.
    #[arg(long)]
    mac_convention: Option<MacConvention>,
    /// f64 or f32.
    #[arg(long)]
    precision: Option<Precision>,
    /// noise or ramp.
    #[arg(long)]
    backbone: Option<BackboneKind>,
    /// Parameters sampled by the end-to-end gradient check.
    #[arg(long)]
    gradcheck_samples: Option<usize>,
    /// Directory for report files; without it text reports go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print JSON documents instead of text tables when writing to stdout.
    #[arg(long)]
    json: bool,
    /// Skew the analytic gradient of the named check (negative control).
    #[arg(long, hide = true)]
    corrupt_gradient: Option<String>,
}

impl Args {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f.clone() { c.$f = v; } )* };
        }
        set!(seed, base_channel, ssf_scheme, include_f5_p5, height, width, batch, suite, mac_convention, precision, backbone, gradcheck_samples);
        if self.reduction.is_some() {
            c.reduction = self.reduction;
        }
        if self.out.is_some() {
            c.out = self.out.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

/// One line: each cause appended unless its text is already included.
fn diagnostic(err: &anyhow::Error) -> String {
    let mut line = String::new();
    for cause in err.chain() {
        let msg = cause.to_string();
        if !line.contains(&msg) {
            if !line.is_empty() {
                line.push_str(": ");
            }
            line.push_str(&msg);
        }
    }
    line.replace('\n', " ")
}

fn main() -> ExitCode {
    let args = Args::parse();
    let config = match args.resolve() {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {}", diagnostic(&e));
            return ExitCode::from(2);
        }
    };
    let docs = match run(&config, args.corrupt_gradient.as_deref()) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {}", diagnostic(&e));
            return ExitCode::from(2);
        }
    };
    let result = match &config.out {
        Some(dir) => write_documents(dir, &config, &docs),
        None => {
            let mut stdout = std::io::stdout().lock();
            docs.iter()
                .try_for_each(|d| stdout.write_all(if args.json { d.json.as_bytes() } else { d.text.as_bytes() }))
                .map_err(Into::into)
        }
    };
    if let Err(e) = result {
        eprintln!("error: {}", diagnostic(&e));
        return ExitCode::from(2);
    }
    match docs.iter().find(|d| !d.passed) {
        Some(d) => {
            eprintln!("error: {} suite failed", d.name);
            ExitCode::from(1)
        }
        None => ExitCode::SUCCESS,
    }
}
