use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use hofrg::amspec::{butterfly, find_critical_energy, pgm_bytes, RotTarget};
use hofrg::arith::{self, constants, pisano, torus_matrix_pow, RatVec, ALPHA};
use hofrg::experiments::{
    butterfly_magnification, fit_power_law, growth_slope, lyapunov_scan_at, rotation_scan_at, scaling_energy,
    MagnificationOptions, Side,
};
use hofrg::renorm::{jacobian_spectrum, sigma_star, solve_fixed_point, unstable_multiplier_at, FixedPointOptions};
use hofrg::Error;

const SCHEMA_VERSION: u32 = 1;

#[derive(Parser, Debug)]
#[command(name = "hofrg", version, about = "Almost Mathieu spectra and golden-mean renormalization")]
struct Cli {
    /// Worker threads for parallel sections.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Output file; standard output when absent.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Output format (commands without a table or image fall back to json).
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Numeric backend.
    #[arg(long, global = true, value_enum, default_value_t = Precision::Double)]
    precision: Precision,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Pgm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Precision {
    Double,
    Extended,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SideArg {
    Below,
    Above,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ObservableArg {
    Lyapunov,
    Rotation,
}

#[derive(Args, Debug)]
struct LambdaArg {
    /// Coupling λ.
    #[arg(long, default_value_t = 1.0)]
    lambda: f64,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Band edges for all reduced p/q with q ≤ qmax (csv, json or pgm).
    Butterfly {
        #[arg(long, default_value_t = 10)]
        qmax: u64,
        #[command(flatten)]
        lambda: LambdaArg,
        #[arg(long, default_value_t = 1024)]
        width: usize,
        #[arg(long, default_value_t = 768)]
        height: usize,
    },
    /// Energy where the golden-mean rotation number reaches ϱ.
    Critical {
        /// Target ϱ in (0, 1/2]: a decimal, a fraction such as 1/8, or "golden" for α*²/2.
        #[arg(long)]
        rho: String,
        #[command(flatten)]
        lambda: LambdaArg,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Renormalization fixed point at the critical energy: trace, σ* and μ₁.
    Renorm {
        #[arg(long, default_value_t = 3)]
        ell: u32,
        /// Periods iterated from the polished fixed point.
        #[arg(long, default_value_t = 6)]
        iters: usize,
        /// Energy; the critical energy when absent.
        #[arg(long)]
        energy: Option<f64>,
        #[command(flatten)]
        lambda: LambdaArg,
    },
    /// Leading eigenvalues of the linearized operator at the fixed point.
    Eigen {
        #[arg(long, default_value_t = 3)]
        ell: u32,
        #[arg(long, default_value_t = 16)]
        modes: usize,
    },
    /// Lyapunov or rotation number scan near E_ℓ with a log-periodic power-law fit.
    Scaling {
        #[arg(long, default_value_t = 3)]
        ell: u32,
        #[arg(long, value_enum, default_value_t = SideArg::Below)]
        side: SideArg,
        #[arg(long, value_enum, default_value_t = ObservableArg::Lyapunov)]
        observable: ObservableArg,
        #[arg(long, default_value_t = 64)]
        points: usize,
        /// Orbit length per energy.
        #[arg(long, default_value_t = 2_000_000)]
        iters: usize,
    },
    /// Growth slope of ln‖G^{q_n}‖ at E_ℓ.
    Growth {
        #[arg(long, default_value_t = 3)]
        ell: u32,
        /// Number of periods sampled.
        #[arg(long, default_value_t = 6)]
        iters: u32,
        #[arg(long, default_value_t = 0.0)]
        x0: f64,
    },
    /// Butterfly magnification frames around (α*, E_ℓ).
    Magnify {
        #[arg(long, default_value_t = 6)]
        ell: u32,
        #[arg(long, default_value_t = 1)]
        steps: u32,
        /// Largest denominator in the first frame.
        #[arg(long)]
        qmax: Option<u64>,
        /// Frame emitted in pgm format.
        #[arg(long, default_value_t = 0)]
        frame: u32,
        #[arg(long, default_value_t = 512)]
        size: usize,
    },
    /// Pisano periods and torus-orbit checks for n ≤ qmax.
    Pisano {
        #[arg(long, default_value_t = 12)]
        qmax: u64,
    },
    /// Golden-mean constants and polynomial roots.
    Constants,
}

enum Failure {
    Usage(String),
    Compute(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Bracket { .. } | Error::Invalid(_) => Failure::Usage(e.to_string()),
            _ => Failure::Compute(e.to_string()),
        }
    }
}

type Out = std::result::Result<Vec<u8>, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn json_doc(command: &str, body: Value) -> Vec<u8> {
    let mut doc = json!({ "schema_version": SCHEMA_VERSION, "command": command });
    if let (Some(d), Value::Object(b)) = (doc.as_object_mut(), body) {
        d.extend(b);
    }
    let mut s = serde_json::to_string_pretty(&doc).expect("json serialization");
    s.push('\n');
    s.into_bytes()
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("json serialization")
}

fn parse_rho(s: &str) -> std::result::Result<f64, Failure> {
    let t = s.trim();
    if t.eq_ignore_ascii_case("golden") {
        return Ok(ALPHA * ALPHA / 2.0);
    }
    let v = match t.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| usage(format!("bad --rho {s}")))?;
            let b: f64 = b.trim().parse().map_err(|_| usage(format!("bad --rho {s}")))?;
            a / b
        }
        None => t.parse().map_err(|_| usage(format!("bad --rho {s}")))?,
    };
    if !(v > 0.0 && v <= 0.5) {
        return Err(usage(format!("--rho {s} outside (0, 1/2]")));
    }
    Ok(v)
}

fn check_ell(ell: u32) -> std::result::Result<(), Failure> {
    if ell == 3 || ell == 6 {
        Ok(())
    } else {
        Err(usage(format!("--ell must be 3 or 6, got {ell}")))
    }
}

fn check_lambda(l: f64) -> std::result::Result<(), Failure> {
    if l.is_finite() && l > 0.0 {
        Ok(())
    } else {
        Err(usage("--lambda must be positive and finite"))
    }
}

fn run(cli: &Cli) -> Out {
    let fmt = cli.format;
    match &cli.cmd {
        Command::Butterfly { qmax, lambda, width, height } => {
            if *qmax == 0 {
                return Err(usage("--qmax must be at least 1"));
            }
            check_lambda(lambda.lambda)?;
            let b = butterfly(*qmax, lambda.lambda)?;
            match fmt.unwrap_or(Format::Csv) {
                Format::Csv => Ok(b.to_csv().into_bytes()),
                Format::Pgm => {
                    if *width == 0 || *height == 0 {
                        return Err(usage("raster size must be positive"));
                    }
                    Ok(pgm_bytes(*width, *height, &b.raster(*width, *height)))
                }
                Format::Json => Ok(json_doc(
                    "butterfly",
                    json!({ "q_max": qmax, "lambda": lambda.lambda, "rows": to_value(&b.rows()) }),
                )),
            }
        }
        Command::Critical { rho, lambda, tol } => {
            check_lambda(lambda.lambda)?;
            if !(*tol > 0.0) {
                return Err(usage("--tol must be positive"));
            }
            let t = parse_rho(rho)?;
            let c = find_critical_energy(RotTarget { rho: t }, lambda.lambda, tol.max(1e-12))?;
            Ok(json_doc(
                "critical",
                json!({ "rho_target": t, "lambda": lambda.lambda, "E": c.e, "rho": c.rho,
                        "rho_err": c.rho_err, "n_iter": c.n_iter, "bracket": c.bracket }),
            ))
        }
        Command::Renorm { ell, iters, energy, lambda } => {
            check_ell(*ell)?;
            check_lambda(lambda.lambda)?;
            if *iters < 3 {
                return Err(usage("--iters must be at least 3"));
            }
            let mut opts = FixedPointOptions::for_ell(*ell);
            opts.polish_periods = *iters;
            let run = solve_fixed_point(*ell, lambda.lambda, *energy, opts)?;
            let sigma = sigma_star(&run.polish)?;
            let mu = unstable_multiplier_at(&run, lambda.lambda, 1e-7, 1, 8)?;
            let c = constants();
            let c_ell = if *ell == 3 { c.c3 } else { c.c6 };
            Ok(json_doc(
                "renorm",
                json!({
                    "ell": ell,
                    "energy": run.energy,
                    "approach": to_value(&run.approach),
                    "newton": to_value(&run.newton),
                    "trace": to_value(&run.polish),
                    "sigma": to_value(&sigma),
                    "sigma_minus_c": sigma.sigma - c_ell,
                    "multiplier": to_value(&mu),
                }),
            ))
        }
        Command::Eigen { ell, modes } => {
            check_ell(*ell)?;
            if *modes == 0 {
                return Err(usage("--modes must be positive"));
            }
            let run = solve_fixed_point(*ell, 1.0, None, FixedPointOptions::for_ell(*ell))?;
            let rep = jacobian_spectrum(&run.pair, *ell, *modes)?;
            Ok(json_doc(
                "eigen",
                json!({
                    "ell": ell,
                    "dimension": rep.dimension,
                    "eigenvalues": rep.eigenvalues(),
                    "modes": to_value(&rep.modes),
                    "unstable_admissible": rep.unstable_admissible(),
                }),
            ))
        }
        Command::Scaling { ell, side, observable, points, iters } => {
            check_ell(*ell)?;
            if *points < 12 {
                return Err(usage("--points must be at least 12"));
            }
            if *iters < 1000 {
                return Err(usage("--iters must be at least 1000"));
            }
            let side = match side {
                SideArg::Below => Side::Below,
                SideArg::Above => Side::Above,
            };
            let e_c = scaling_energy(*ell)?;
            let scan = match observable {
                ObservableArg::Lyapunov => lyapunov_scan_at(*ell, e_c, side, *points, *iters)?,
                ObservableArg::Rotation => rotation_scan_at(*ell, e_c, side, *points, *iters)?,
            };
            match fmt.unwrap_or(Format::Json) {
                Format::Csv => Ok(scan.to_csv().into_bytes()),
                Format::Pgm => Err(usage("scaling has no pgm output")),
                Format::Json => {
                    let fit = fit_power_law(&scan)?;
                    let c = constants();
                    let tau = if *ell == 3 { c.tau3 } else { c.tau6 };
                    Ok(json_doc("scaling", json!({ "scan": to_value(&scan), "fit": to_value(&fit), "tau": tau })))
                }
            }
        }
        Command::Growth { ell, iters, x0 } => {
            check_ell(*ell)?;
            let e = scaling_energy(*ell)?;
            let g = growth_slope(e, 1.0, *ell, *iters, *x0)?;
            let c = constants();
            let target = 2.0 * if *ell == 3 { c.c3 } else { c.c6 } / *ell as f64;
            Ok(json_doc("growth", json!({ "ell": ell, "energy": e, "fit": to_value(&g), "expected": target })))
        }
        Command::Magnify { ell, steps, qmax, frame, size } => {
            check_ell(*ell)?;
            let mut opts = MagnificationOptions::for_ell(*ell);
            if let Some(q) = qmax {
                opts.q0_max = *q;
            }
            let m = butterfly_magnification(*ell, *steps, opts)?;
            match fmt.unwrap_or(Format::Json) {
                Format::Pgm => {
                    let f = m
                        .frames
                        .get(*frame as usize)
                        .ok_or_else(|| usage(format!("--frame {frame} beyond --steps {steps}")))?;
                    if *size == 0 {
                        return Err(usage("--size must be positive"));
                    }
                    Ok(pgm_bytes(*size, *size, &f.raster(*size, *size)))
                }
                Format::Csv => Err(usage("magnify has no csv output")),
                Format::Json => {
                    let frames: Vec<Value> = m
                        .frames
                        .iter()
                        .map(|f| {
                            json!({ "step": f.step, "center": [f.center_alpha, f.center_energy],
                                    "alpha_half_width": f.alpha_half_width,
                                    "energy_half_width": f.energy_half_width,
                                    "columns": f.columns.len(),
                                    "max_q": f.columns.iter().map(|c| c.q).max() })
                        })
                        .collect();
                    Ok(json_doc(
                        "magnify",
                        json!({ "ell": ell, "mu1": m.mu1, "alpha_factor": m.alpha_factor,
                                "frames": frames, "overlaps": m.overlaps }),
                    ))
                }
            }
        }
        Command::Pisano { qmax } => {
            if *qmax < 2 {
                return Err(usage("--qmax must be at least 2"));
            }
            let mut rows = Vec::new();
            for n in 2..=*qmax {
                let l = pisano(n)?;
                let u = torus_matrix_pow(l, n);
                let identity = u == [[1 % n, 0], [0, 1 % n]];
                let orbit = arith::orbit_period(RatVec::new(0, 1, n)?);
                rows.push((n, l, orbit, identity));
            }
            match fmt.unwrap_or(Format::Csv) {
                Format::Csv => {
                    let mut s = String::from("n,pisano,orbit_period_0_1_over_n,u_power_is_identity\n");
                    for (n, l, o, id) in &rows {
                        s.push_str(&format!("{n},{l},{o},{}\n", *id as u8));
                    }
                    Ok(s.into_bytes())
                }
                Format::Json => {
                    let table: Vec<Value> = rows
                        .iter()
                        .map(|(n, l, o, id)| json!({ "n": n, "pisano": l, "orbit_period": o, "u_power_is_identity": id }))
                        .collect();
                    Ok(json_doc("pisano", json!({ "table": table })))
                }
                Format::Pgm => Err(usage("pisano has no pgm output")),
            }
        }
        Command::Constants => {
            if matches!(fmt, Some(Format::Csv | Format::Pgm)) {
                return Err(usage("constants is json only"));
            }
            let c = constants();
            let mut body = to_value(&c);
            if let Value::Object(m) = &mut body {
                m.insert("p3_real_roots".into(), to_value(&arith::real_roots(&arith::p3())));
                m.insert("p6_real_roots".into(), to_value(&arith::real_roots(&arith::p6())));
                m.insert("q3_real_roots".into(), to_value(&arith::real_roots(&arith::q3())));
                m.insert("q6_real_roots".into(), to_value(&arith::real_roots(&arith::q6())));
            }
            Ok(json_doc("constants", body))
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if cli.precision == Precision::Extended {
        eprintln!("error: extended precision is not available in this build");
        return ExitCode::from(2);
    }
    if cli.workers == 0 {
        eprintln!("error: --workers must be at least 1");
        return ExitCode::from(2);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.workers).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(bytes) => {
            let written = match &cli.out {
                Some(p) => fs::write(p, &bytes),
                None => std::io::stdout().write_all(&bytes),
            };
            match written {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            }
        }
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Compute(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}
