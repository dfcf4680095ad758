use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rectfree::cumulant::{cumulants_to_moments, is_free_with_amalgamation, moments_to_cumulants};
use rectfree::dblock::{ScalarCumulantTable, ScalarMomentTable, Table, TableKind};
use rectfree::entropy::{chi_single, constant_c, maximizer_gap, rate_j, EntropyInput};
use rectfree::fisher::{check_conjugate_relations, cramer_rao, ConjugateCandidate, Form};
use rectfree::measures::{Extended, GridMeasure};
use rectfree::ncderiv::{jacobian_report, MatrixPoint, PolySystem};
use rectfree::ncpart::{self, MAX_NC};
use rectfree::randmat::{convergence_experiment, polar_scenario, singular_law_check, EnsemblePlan};
use rectfree::{Error, Result};
use serde_json::{json, Map, Value};

const EXIT_VALIDATION: u8 = 2;
const EXIT_CAPACITY: u8 = 3;
const EXIT_STATISTICAL: u8 = 4;
const EXIT_USAGE: u8 = 64;

#[derive(Parser, Debug)]
#[command(name = "rectfree", version, about = "Rectangular free probability toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Direction {
    M2c,
    C2m,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Noncrossing partitions of [n].
    Nc {
        #[arg(long)]
        n: usize,
        /// Print only the number of partitions.
        #[arg(long, conflicts_with = "list")]
        count: bool,
        /// Print one partition per line.
        #[arg(long)]
        list: bool,
    },
    /// Moment-cumulant transforms of a table.
    Cumulant {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        direction: Direction,
        #[arg(long, default_value_t = 8)]
        degree: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mixed-cumulant test of freeness with amalgamation.
    Freeness {
        #[arg(long = "in")]
        input: PathBuf,
        /// JSON array of generator-name groups.
        #[arg(long)]
        groups: PathBuf,
        #[arg(long)]
        degree: Option<usize>,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Moments of the Marchenko-Pastur law.
    Mp {
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        moments: usize,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        /// Wrap the moments in a report object.
        #[arg(long)]
        json: bool,
    },
    /// Free entropy of a single rectangular element.
    Entropy {
        #[arg(long)]
        measure: PathBuf,
        #[arg(long = "rho-k", default_value_t = 0.5)]
        rho_k: f64,
        #[arg(long = "rho-l", default_value_t = 0.5)]
        rho_l: f64,
        /// Include the rate function J.
        #[arg(long)]
        rate: bool,
        /// Include the gap to the constrained maximizer.
        #[arg(long = "max-gap", requires = "mean_cap")]
        max_gap: bool,
        #[arg(long = "mean-cap")]
        mean_cap: Option<f64>,
    },
    /// Conjugate relations, Fisher information and Cramer-Rao slack.
    Fisher {
        #[arg(long)]
        joint: PathBuf,
        #[arg(long = "xi-names", value_delimiter = ',', required = true)]
        xi_names: Vec<String>,
        #[arg(long, default_value_t = 8)]
        degree: usize,
    },
    /// Log-Jacobian of a polynomial change of variables.
    Jacobian {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        point: PathBuf,
    },
    /// Monte Carlo experiment from a plan.
    Simulate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Override the plan's seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Exit with status 4 when the statistical check fails.
        #[arg(long)]
        assert: bool,
    },
}

enum Outcome {
    Ok,
    StatisticalFailure,
}

fn read_json(path: &Path) -> Result<Value> {
    let s = fs::read_to_string(path).map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&s).map_err(|e| Error::Validation(format!("{} is not valid JSON: {e}", path.display())))
}

fn write_text(path: &Path, s: &str) -> Result<()> {
    fs::write(path, s).map_err(|e| Error::Configuration(format!("cannot write {}: {e}", path.display())))
}

fn render(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("values serialize");
    s.push('\n');
    s
}

fn ext(x: Extended) -> Value {
    match x {
        Extended::Finite(v) => json!(v),
        Extended::NegInfinity => json!("-inf"),
    }
}

fn float(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        json!("nan")
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn with_config(config: Value, body: Value) -> Value {
    let mut root = Map::new();
    root.insert("config".into(), config);
    if let Value::Object(m) = body {
        root.extend(m);
    } else {
        root.insert("result".into(), body);
    }
    Value::Object(root)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn restrict<K: TableKind>(t: &Table<K>, degree: usize) -> Result<Table<K>> {
    if degree == 0 || degree > t.degree() {
        return Err(Error::Validation(format!("degree {degree} outside 1..={}", t.degree())));
    }
    let mut out = Table::new(t.alphabet().clone(), degree);
    for (w, v) in t.iter() {
        if w.len() <= degree {
            out.insert(w, *v)?;
        }
    }
    Ok(out)
}

fn integral(x: f64) -> Value {
    if x.fract() == 0.0 && x.abs() < 9.0e15 {
        json!(x as i64)
    } else {
        json!(x)
    }
}

fn mp_moments(lambda: f64, scale: f64, k: usize) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda.is_finite() && scale > 0.0 && scale.is_finite()) {
        return Err(Error::Validation(format!("need lambda > 0 and scale > 0, got {lambda}, {scale}")));
    }
    if k > MAX_NC {
        return Err(Error::Capacity(format!("{k} moments exceed the partition cap {MAX_NC}")));
    }
    (1..=k)
        .map(|n| {
            let mut sum = 0.0;
            ncpart::for_each_nc_rgs(n, |rgs| {
                let blocks = rgs.iter().copied().max().map_or(0, |b| b as i32 + 1);
                sum += lambda.powi(blocks);
            })?;
            Ok(sum * scale.powi(n as i32))
        })
        .collect()
}

fn run(cmd: Cmd) -> Result<Outcome> {
    match cmd {
        Cmd::Nc { n, count, list } => {
            if n == 0 {
                return Err(Error::Validation("n must be at least 1".into()));
            }
            if count {
                println!("{}", ncpart::count_nc(n)?);
            } else if list {
                for p in ncpart::enumerate_nc(n)? {
                    println!("{p}");
                }
            } else {
                let count = ncpart::count_nc(n)?;
                let mobius = ncpart::MobiusCache::default().mobius(&ncpart::Partition::bottom(n), &ncpart::Partition::top(n))?;
                print!("{}", render(&with_config(json!({"subcommand": "nc", "n": n}), json!({"count": count, "mobius_bottom_top": mobius}))));
            }
        }
        Cmd::Cumulant { input, direction, degree, out } => {
            let v = read_json(&input)?;
            let config = json!({
                "subcommand": "cumulant",
                "in": path_str(&input),
                "direction": match direction { Direction::M2c => "m2c", Direction::C2m => "c2m" },
                "degree": degree,
            });
            let table = match direction {
                Direction::M2c => {
                    let m = restrict(&ScalarMomentTable::from_json_value(&v)?, degree)?;
                    moments_to_cumulants(&m)?.to_json_value()
                }
                Direction::C2m => {
                    let c = restrict(&ScalarCumulantTable::from_json_value(&v)?, degree)?;
                    cumulants_to_moments(&c)?.to_json_value()
                }
            };
            let doc = render(&with_config(config, table));
            match out {
                Some(p) => write_text(&p, &doc)?,
                None => print!("{doc}"),
            }
        }
        Cmd::Freeness { input, groups, degree, tol } => {
            let m = ScalarMomentTable::from_json_value(&read_json(&input)?)?;
            let groups: Vec<Vec<String>> = serde_json::from_value(read_json(&groups)?)
                .map_err(|e| Error::Validation(format!("groups must be an array of name arrays: {e}")))?;
            let a = m.alphabet();
            let mut grouping = vec![usize::MAX; a.gens().len()];
            for (gi, names) in groups.iter().enumerate() {
                for name in names {
                    let g = a.index_of(name).ok_or_else(|| Error::Validation(format!("unknown generator {name:?} in groups")))?;
                    if grouping[g] != usize::MAX {
                        return Err(Error::Validation(format!("generator {name:?} appears in two groups")));
                    }
                    grouping[g] = gi;
                }
            }
            if let Some(g) = grouping.iter().position(|&g| g == usize::MAX) {
                return Err(Error::Validation(format!("generator {:?} is in no group", a.gens()[g].name)));
            }
            let degree = degree.unwrap_or(m.degree());
            let report = is_free_with_amalgamation(&m, &grouping, degree)?;
            let config = json!({"subcommand": "freeness", "in": path_str(&input), "groups": groups, "degree": degree, "tol": tol});
            let mut body = serde_json::to_value(&report).expect("report serializes");
            body["free"] = json!(report.max_mixed_cumulant <= tol);
            print!("{}", render(&with_config(config, body)));
        }
        Cmd::Mp { lambda, moments, scale, json } => {
            let ms = mp_moments(lambda, scale, moments)?;
            let arr = Value::Array(ms.iter().map(|&x| integral(x)).collect());
            if json {
                let config = json!({"subcommand": "mp", "lambda": lambda, "scale": scale, "moments": moments});
                print!("{}", render(&with_config(config, json!({"moments": arr}))));
            } else {
                println!("{}", serde_json::to_string(&arr).expect("array serializes").replace(',', ", "));
            }
        }
        Cmd::Entropy { measure, rho_k, rho_l, rate, max_gap, mean_cap } => {
            let mu = GridMeasure::from_json_value(&read_json(&measure)?)?;
            let (lo, hi) = (rho_k.min(rho_l), rho_k.max(rho_l));
            let chi = chi_single(&EntropyInput::new(mu.clone(), rho_k, rho_l)?)?;
            let mut body = json!({"chi": ext(chi), "C": constant_c(lo, hi)?});
            if rate {
                body["J"] = float(rate_j(&mu, lo, hi)?);
            }
            if max_gap {
                let c = mean_cap.expect("clap requires the cap");
                body["gap"] = float(maximizer_gap(&mu, lo, hi, c)?);
            }
            let config = json!({
                "subcommand": "entropy",
                "measure": path_str(&measure),
                "rho_k": rho_k,
                "rho_l": rho_l,
                "rate": rate,
                "max_gap": max_gap,
                "mean_cap": mean_cap,
            });
            print!("{}", render(&with_config(config, body)));
        }
        Cmd::Fisher { joint, xi_names, degree } => {
            let table = ScalarMomentTable::from_json_value(&read_json(&joint)?)?;
            let names: Vec<&str> = xi_names.iter().map(String::as_str).collect();
            let cand = ConjugateCandidate::new(table, &names)?;
            let violations = Form::ALL
                .iter()
                .map(|&f| check_conjugate_relations(&cand, degree, f))
                .collect::<Result<Vec<_>>>()?;
            let cr = cramer_rao(&cand, degree)?;
            let config = json!({"subcommand": "fisher", "joint": path_str(&joint), "xi_names": xi_names, "degree": degree});
            let body = json!({
                "violations": violations,
                "phi_r": cr.phi_r,
                "cramer_rao_slack": float(cr.slack),
                "cramer_rao": cr,
            });
            print!("{}", render(&with_config(config, body)));
        }
        Cmd::Jacobian { system, point } => {
            let sys = PolySystem::from_json_value(&read_json(&system)?)?;
            let pt = MatrixPoint::from_json_value(sys.alphabet.clone(), &read_json(&point)?)?;
            let report = jacobian_report(&sys, &pt)?;
            let config = json!({"subcommand": "jacobian", "system": path_str(&system), "point": path_str(&point)});
            print!("{}", render(&with_config(config, serde_json::to_value(&report).expect("report serializes"))));
        }
        Cmd::Simulate { plan, out, csv, seed, assert } => {
            let mut v = read_json(&plan)?;
            if let (Some(s), Some(obj)) = (seed, v.as_object_mut()) {
                obj.insert("seed".into(), json!(s));
            }
            let scenario = v.get("scenario").and_then(Value::as_str).map(str::to_string);
            let config = json!({"subcommand": "simulate", "plan": path_str(&plan), "seed_override": seed, "assert": assert});
            let (body, pass, table) = match scenario.as_deref() {
                None => {
                    let p: EnsemblePlan =
                        serde_json::from_value(v).map_err(|e| Error::Validation(format!("malformed plan: {e}")))?;
                    let r = convergence_experiment(&p)?;
                    (serde_json::to_value(&r).expect("report serializes"), r.pass, Some(r.to_csv()))
                }
                Some("singular_law") => {
                    let q = usize_field(&v, "q")?;
                    let qp = usize_field(&v, "q_prime")?;
                    let samples = usize_field(&v, "samples")?;
                    let r = singular_law_check(q, qp, samples, u64_field(&v, "seed")?)?;
                    (serde_json::to_value(&r).expect("report serializes"), r.pass, None)
                }
                Some("polar") => {
                    let n = usize_field(&v, "n")?;
                    let trials = usize_field(&v, "trials")?;
                    let kappa = v
                        .get("kernel_fraction")
                        .and_then(Value::as_f64)
                        .ok_or_else(|| Error::Validation("polar plan needs kernel_fraction".into()))?;
                    let h = GridMeasure::from_json_value(
                        v.get("h_law").ok_or_else(|| Error::Validation("polar plan needs h_law".into()))?,
                    )?;
                    let r = polar_scenario(n, kappa, &h, trials, u64_field(&v, "seed")?)?;
                    (serde_json::to_value(&r).expect("report serializes"), r.pass, None)
                }
                Some(other) => return Err(Error::Validation(format!("unknown scenario {other:?}"))),
            };
            write_text(&out, &render(&with_config(config, body)))?;
            if let Some(p) = csv {
                let t = table.ok_or_else(|| Error::Validation("CSV export is only available for ensemble plans".into()))?;
                write_text(&p, &t)?;
            }
            if assert && !pass {
                return Ok(Outcome::StatisticalFailure);
            }
        }
    }
    Ok(Outcome::Ok)
}

fn usize_field(v: &Value, key: &str) -> Result<usize> {
    Ok(u64_field(v, key)? as usize)
}

fn u64_field(v: &Value, key: &str) -> Result<u64> {
    v.get(key).and_then(Value::as_u64).ok_or_else(|| Error::Validation(format!("plan needs a non-negative integer {key:?}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.cmd) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::StatisticalFailure) => {
            eprintln!("{}", json!({"error": {"kind": "statistical", "message": "statistical check failed"}}));
            ExitCode::from(EXIT_STATISTICAL)
        }
        Err(e) => {
            let msg = match &e {
                Error::Validation(m)
                | Error::Capacity(m)
                | Error::Usage(m)
                | Error::Domain(m)
                | Error::Precondition(m)
                | Error::Configuration(m) => m.clone(),
            };
            eprintln!("{}", json!({"error": {"kind": e.kind(), "message": msg}}));
            ExitCode::from(if matches!(e, Error::Capacity(_)) { EXIT_CAPACITY } else { EXIT_VALIDATION })
        }
    }
}
