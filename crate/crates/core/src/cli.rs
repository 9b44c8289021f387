//! Command-line front end. `run` returns the process exit code: 0 when every
//! requested check passes, 1 on a failed check or a pipeline failure, 2 on
//! bad input.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::beta::{beta_inf_bruteforce, compute_beta_field, BetaParams};
use crate::corona::{build_regimes, CoronaParams};
use crate::dyadic::{DyadicTree, TreeOptions};
use crate::error::{Error, Result};
use crate::io;
use crate::regularity::{calderon_identity_check, certify_regular, half_t_derivative_fourier, half_t_derivative_kernel, relative_l2, LpFilterBank};
use crate::surfaces::{synthesize, SurfaceKind, SynthParams};
use crate::verify::{self, Battery, VerifyOptions};
use crate::whitney::{approximation_audit, assemble_psi, audit_family};

#[derive(Parser, Debug)]
#[command(name = "paracorona", version, about = "Parabolic beta numbers, corona regimes and Lip(1,1/2) graphs on sampled space-time surfaces")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a synthetic surface.
    Synth(SynthArgs),
    /// Build the dyadic cube tree of a surface.
    Cubes(CubesArgs),
    /// Beta numbers of every cube.
    Beta(BetaArgs),
    /// Corona decomposition into coherent regimes.
    Corona(CoronaArgs),
    /// Whitney graph of one regime plus its approximation audit.
    Graph(GraphArgs),
    /// Half-order time regularity report of a graph grid.
    Regularity(RegularityArgs),
    /// Run the acceptance battery.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Surface spec as JSON; flags below override its fields.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    #[arg(long, value_parser = parse_kind)]
    pub kind: Option<SurfaceKind>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub spacing: Option<f64>,
    #[arg(long)]
    pub extent: Option<f64>,
    #[arg(long)]
    pub amplitude: Option<f64>,
    #[arg(long)]
    pub frequency: Option<f64>,
    #[arg(long)]
    pub octaves: Option<u32>,
    #[arg(long)]
    pub generations: Option<u32>,
    #[arg(long)]
    pub hole_radius: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CubesArgs {
    /// Surface file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub max_depth: Option<u32>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BetaArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long = "K", default_value_t = 4.0)]
    pub k: f64,
    /// Accepted for symmetry with corona; windows depend on K only.
    #[arg(long, default_value_t = 2.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 16)]
    pub sup_refine_iters: usize,
    #[arg(long)]
    pub bilateral: bool,
    /// Cross-check beta_inf against a normal-grid search on up to 256 cubes.
    #[arg(long)]
    pub oracle: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CoronaArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub betas: PathBuf,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Defaults to delta/20.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long, default_value_t = 2.0)]
    pub kappa: f64,
    #[arg(long = "K", default_value_t = 4.0)]
    pub k: f64,
    #[arg(long)]
    pub bilateral: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GraphArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub tree: PathBuf,
    #[arg(long)]
    pub corona: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub regime: u32,
    /// Cap on the enumerated Whitney family.
    #[arg(long, default_value_t = 150_000)]
    pub max_cells: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RegularityArgs {
    /// Grid file or graph header.
    #[arg(long)]
    pub input: PathBuf,
    /// Truncation of the kernel half-derivative, in time units.
    #[arg(long)]
    pub cutoff: Option<f64>,
    /// Octaves of the Littlewood-Paley bank used for the reproducing check.
    #[arg(long)]
    pub octaves: Option<usize>,
    #[arg(long, default_value_t = 0.1)]
    pub delta: f64,
    /// Carleson norm of the square function entering the bound.
    #[arg(long, default_value_t = 0.0)]
    pub nu: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_parser = parse_battery, default_value = "full")]
    pub battery: Battery,
    /// Comma separated criterion ids; all by default.
    #[arg(long, value_delimiter = ',')]
    pub criteria: Option<Vec<u8>>,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 100_000)]
    pub b1_pairs: usize,
    /// Directory receiving summary.json and checks.csv.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_kind(s: &str) -> std::result::Result<SurfaceKind, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown surface kind {s}"))
}

fn parse_battery(s: &str) -> std::result::Result<Battery, String> {
    match s {
        "full" => Ok(Battery::Full),
        "t_plane" | "t-plane" | "tplane" => Ok(Battery::TPlane),
        _ => Err(format!("unknown battery {s} (full or t_plane)")),
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Input(_) | Error::Parse { .. } | Error::Precondition(_) | Error::Io(_) | Error::Json(_) => 2,
        _ => 1,
    }
}

/// Parse `argv` (program name first) and execute.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Some(n) = std::env::var("PARACORONA_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        // A second call in the same process keeps the first pool.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match execute(cli.command) {
        Ok(pass) => {
            if pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            eprintln!("paracorona: {e}");
            exit_code(&e)
        }
    }
}

fn print_json(v: &serde_json::Value) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", serde_json::to_string_pretty(v).unwrap_or_default());
}

fn execute(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Cubes(a) => cubes(a),
        Command::Beta(a) => beta(a),
        Command::Corona(a) => corona(a),
        Command::Graph(a) => graph(a),
        Command::Regularity(a) => regularity(a),
        Command::Verify(a) => verify_cmd(a),
    }
}

fn synth(a: SynthArgs) -> Result<bool> {
    let mut p = match &a.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let kind: SurfaceKind = serde_json::from_value(v.get("kind").cloned().unwrap_or_default())
                .map_err(|e| Error::Input(format!("spec needs a surface kind: {e}")))?;
            let n = v.get("n").and_then(|x| x.as_u64()).unwrap_or(2) as usize;
            let h = v.get("spacing").and_then(|x| x.as_f64()).unwrap_or(0.05);
            let l = v.get("extent").and_then(|x| x.as_f64()).unwrap_or(1.0);
            // Fields absent from the file keep the kind defaults.
            let mut base = serde_json::to_value(SynthParams::new(kind, n, h, l))?;
            if let (Some(b), Some(o)) = (base.as_object_mut(), v.as_object()) {
                for (k, x) in o {
                    b.insert(k.clone(), x.clone());
                }
            }
            serde_json::from_value(base).map_err(|e| Error::Input(format!("bad surface spec: {e}")))?
        }
        None => {
            let kind = a.kind.ok_or_else(|| Error::Input("synth needs --kind or --spec".into()))?;
            SynthParams::new(kind, a.n.unwrap_or(2), a.spacing.unwrap_or(0.05), a.extent.unwrap_or(1.0))
        }
    };
    if let Some(k) = a.kind {
        if a.spec.is_some() {
            p.kind = k;
        }
    }
    if a.spec.is_some() {
        if let Some(n) = a.n {
            p.n = n;
        }
        if let Some(h) = a.spacing {
            p.spacing = h;
        }
        if let Some(l) = a.extent {
            p.extent = l;
        }
    }
    if let Some(x) = a.amplitude {
        p.amplitude = x;
    }
    if let Some(x) = a.frequency {
        p.frequency = x;
    }
    if let Some(x) = a.octaves {
        p.octaves = x;
    }
    if let Some(x) = a.generations {
        p.generations = x;
    }
    if let Some(x) = a.hole_radius {
        p.hole_radius = x;
    }
    if let Some(x) = a.seed {
        p.seed = x;
    }
    let (s, truth) = synthesize(&p)?;
    io::save_surface(&s, &a.out)?;
    print_json(&json!({"out": a.out, "points": s.len(), "spec": p, "truth": truth, "warnings": s.sampling_warnings()}));
    Ok(true)
}

fn cubes(a: CubesArgs) -> Result<bool> {
    let s = io::load_surface(&a.input)?;
    let tree = DyadicTree::build(&s, TreeOptions { max_depth: a.max_depth, ..Default::default() })?;
    io::save_tree(&tree, &s, &a.out)?;
    let per_gen: Vec<usize> = tree.generations.iter().map(|g| g.len()).collect();
    print_json(&json!({"out": a.out, "cubes": tree.len(), "generations": per_gen}));
    Ok(true)
}

fn beta(a: BetaArgs) -> Result<bool> {
    let s = io::load_surface(&a.input)?;
    let tree = io::load_tree(&a.tree, &s)?;
    let params = BetaParams { k: a.k, bilateral: a.bilateral, sup_refine_iters: a.sup_refine_iters, ..Default::default() };
    let field = compute_beta_field(&s, &tree, params)?;
    io::save_betas(&field, &a.out)?;
    let resolved: Vec<u32> = field.records.iter().filter(|r| r.resolved).map(|r| r.cube).collect();
    let mut summary = json!({"out": a.out, "cubes": field.records.len(), "resolved": resolved.len(), "K": a.k});
    let mut pass = true;
    if a.oracle {
        let stride = resolved.len().div_ceil(256).max(1);
        let picked: Vec<u32> = resolved.iter().copied().step_by(stride).collect();
        let grid = if s.n == 2 { 20_000 } else { 10_000 };
        let floor = s.spacing / 100.0;
        let mut csv = String::from("cube,k,beta_inf,oracle,gap\n");
        let mut worst = 0.0f64;
        for &q in &picked {
            let fast = field.get(q).beta_inf;
            let brute = beta_inf_bruteforce(&s, &tree, q, a.k, grid);
            // Relative gap above an absolute floor of a hundredth of the spacing.
            let diam = tree.cube(q).diam.max(s.spacing);
            let gap = (fast - brute).abs() / brute.max(floor / diam);
            worst = worst.max(gap);
            csv.push_str(&format!("{q},{},{fast},{brute},{gap}\n", tree.cube(q).k));
        }
        let path = io::sidecar(&a.out, "oracle.csv");
        std::fs::write(&path, csv)?;
        pass = worst <= 0.05;
        summary["oracle"] = json!({"cubes": picked.len(), "max_gap": worst, "bound": 0.05, "pass": pass, "csv": path});
    }
    print_json(&summary);
    Ok(pass)
}

fn corona(a: CoronaArgs) -> Result<bool> {
    let mut params = CoronaParams::new(a.epsilon.unwrap_or(a.delta / 20.0), a.delta);
    params.kappa = a.kappa;
    params.k = a.k;
    params.bilateral = a.bilateral;
    params.validate()?;
    let s = io::load_surface(&a.input)?;
    let tree = io::load_tree(&a.tree, &s)?;
    let field = io::load_betas(&a.betas)?;
    if (field.params.k - a.k).abs() > 1e-12 {
        return Err(Error::Input(format!("betas were computed with K = {}, corona asked for K = {}", field.params.k, a.k)));
    }
    if a.bilateral && !field.params.bilateral {
        return Err(Error::Input("--bilateral needs betas computed with --bilateral".into()));
    }
    let c = build_regimes(&tree, &field, params)?;
    io::save_corona(&c, &a.out)?;
    let regimes: Vec<_> =
        c.regimes.iter().map(|r| json!({"id": r.id, "root": r.root, "members": r.members.len(), "minimal": r.minimal.len()})).collect();
    print_json(&json!({"out": a.out, "params": params, "regimes": regimes, "bad": c.bad.len(), "packing": c.packing}));
    Ok(true)
}

fn graph(a: GraphArgs) -> Result<bool> {
    let s = io::load_surface(&a.input)?;
    let tree = io::load_tree(&a.tree, &s)?;
    let c = io::load_corona(&a.corona)?;
    if c.regimes.iter().all(|r| r.id != a.regime) {
        return Err(Error::Input(format!("no regime {} (have {})", a.regime, c.regimes.len())));
    }
    let g = assemble_psi(&s, &tree, &c, a.regime)?;
    let grid = verify::regularity_grid(&g)?;
    io::save_graph(&g, &grid, &a.out)?;
    let (cubes, complete, near_f) = audit_family(&g, a.max_cells, 2000, a.seed);
    let whitney_path = io::sidecar(&a.out, "whitney.jsonl");
    io::save_whitney(&cubes, &whitney_path)?;
    let audit = approximation_audit(&s, &tree, &g, c.params.bilateral);
    let audit_path = io::sidecar(&a.out, "audit.json");
    io::save_json(&audit, &audit_path)?;
    let pass = audit.forward_failures == 0 && audit.reverse_failures == 0;
    print_json(&json!({
        "out": a.out,
        "regime": a.regime,
        "whitney": {"path": whitney_path, "written": cubes.len(), "complete": complete, "near_f": near_f},
        "audit": audit,
        "pass": pass,
    }));
    Ok(pass)
}

fn regularity(a: RegularityArgs) -> Result<bool> {
    let psi = io::load_grid(&a.input)?;
    let report = certify_regular(&psi, a.delta, a.nu)?;
    let mut pass = report.backend_residual <= 1e-3 && report.b2.is_finite();
    let mut out = json!({"input": a.input, "report": report});
    if let Some(cutoff) = a.cutoff {
        let gap = relative_l2(&half_t_derivative_kernel(&psi, cutoff)?, &half_t_derivative_fourier(&psi)?);
        out["kernel"] = json!({"cutoff": cutoff, "residual": gap});
    }
    if let Some(oct) = a.octaves {
        let bank = LpFilterBank::new(psi.m(), psi.hx / 16.0, oct);
        let res = calderon_identity_check(&bank, &psi)?;
        pass &= res <= 0.05;
        out["calderon"] = json!({"octaves": oct, "lambda_min": bank.lambda_min, "residual": res, "bound": 0.05});
    }
    out["pass"] = json!(pass);
    if let Some(p) = &a.out {
        io::save_json(&out, p)?;
    }
    print_json(&out);
    Ok(pass)
}

fn write_reports(dir: &Path, summary: &verify::Summary, checks: &[verify::Check]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    io::save_json(summary, &dir.join("summary.json"))?;
    std::fs::write(dir.join("checks.csv"), verify::checks_csv(checks))?;
    Ok(())
}

fn verify_cmd(a: VerifyArgs) -> Result<bool> {
    let mut o = VerifyOptions { battery: a.battery, seed: a.seed, b1_pairs: a.b1_pairs, ..Default::default() };
    if let Some(c) = a.criteria {
        if let Some(bad) = c.iter().find(|&&id| !(1..=9).contains(&id)) {
            return Err(Error::Input(format!("no criterion {bad}")));
        }
        o.criteria = c;
    }
    let mut criteria = Vec::new();
    let mut checks = Vec::new();
    for &id in &o.criteria {
        let (c, ch) = verify::run_criterion(id, &o);
        println!("{}", verify::criterion_line(&c));
        criteria.push(c);
        checks.extend(ch);
    }
    let summary = verify::Summary { pass: criteria.iter().all(|c| c.pass), options: o, criteria };
    if let Some(dir) = &a.out {
        write_reports(dir, &summary, &checks)?;
    }
    Ok(summary.pass)
}
