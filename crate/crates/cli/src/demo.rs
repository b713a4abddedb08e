//! Bundled end-to-end scenarios: data, synthesis, verification and a
//! comparison against the reference values where those exist.

use std::path::Path;

use absstab::constraints::{LiftedConstraint, QuadConstraint};
use absstab::io;
use absstab::matcore::{Mat, SymMat, Vector};
use absstab::plant::{DataSet, IntegratorOptions, PlantModel};
use absstab::scenarios::{self, printed, rows};
use absstab::synth::{self, Certificate, Method, Outcome, SynthesisSpec};
use absstab::verify::{self, SimulationSetup, VerificationReport, VerifyOptions};

use crate::{
    ensure_dir, outcome_failure, print_report, CmdResult, DemoName, Failure, EXIT_STRUCTURAL,
    EXIT_VERIFY_FAILED,
};

struct Table {
    rows: Vec<(String, f64, f64, f64)>,
}

impl Table {
    fn new() -> Self {
        Table { rows: Vec::new() }
    }

    fn add(&mut self, label: &str, printed: &Mat, ours: &Mat) {
        for i in 0..printed.nrows() {
            for j in 0..printed.ncols() {
                self.rows.push((
                    format!("{label}[{i},{j}]"),
                    printed[(i, j)],
                    ours[(i, j)],
                    (printed[(i, j)] - ours[(i, j)]).abs(),
                ));
            }
        }
    }

    fn print(&self, title: &str, tol: f64) -> f64 {
        println!("{title}");
        println!(
            "  {:<12} {:>12} {:>12} {:>11}",
            "entry", "printed", "reproduced", "|diff|"
        );
        let mut worst: f64 = 0.0;
        for (l, p, o, d) in &self.rows {
            println!("  {l:<12} {p:>12.4} {o:>12.4} {d:>11.3e}");
            worst = worst.max(*d);
        }
        println!(
            "  max deviation {worst:.3e} ({} tolerance {tol:.0e})",
            if worst <= tol { "within" } else { "exceeds" }
        );
        worst
    }
}

fn stage<T>(name: &str, r: absstab::Result<T>) -> Result<T, Failure> {
    r.map_err(|e| Failure {
        code: EXIT_STRUCTURAL,
        message: format!("{name} stage failed: {e}"),
    })
}

fn synthesize_stage(
    data: &DataSet,
    lc: &LiftedConstraint,
    spec: &SynthesisSpec,
) -> Result<Certificate, Failure> {
    let outcome = stage("synthesis", synth::synthesize(data, lc, spec))?;
    if let Some(mut f) = outcome_failure(&outcome) {
        f.message = format!("synthesis stage: {}", f.message);
        return Err(f);
    }
    let Outcome::Certified(cert) = outcome else {
        unreachable!()
    };
    println!("synthesis ({}): FEASIBLE", cert.method);
    println!("  K = {}", io::format_bracket(&cert.k));
    if let Some(m) = &cert.m {
        println!("  M = {}", io::format_bracket(m));
    }
    println!("  P = {}", io::format_bracket(cert.p.as_mat()));
    Ok(*cert)
}

fn verify_stage(
    cert: &Certificate,
    data: &DataSet,
    lc: &LiftedConstraint,
    sim: &SimulationSetup,
) -> Result<VerificationReport, Failure> {
    let report = stage(
        "verification",
        verify::verify_certificate(cert, data, lc, &VerifyOptions::default(), Some(sim)),
    )?;
    println!("verification:");
    print_report(&report);
    Ok(report)
}

struct Artifacts<'a> {
    model: &'a PlantModel,
    constraint: &'a QuadConstraint,
    data: &'a DataSet,
    cert: &'a Certificate,
    report: &'a VerificationReport,
}

fn export(dir: &Path, a: &Artifacts) -> CmdResult {
    ensure_dir(dir)?;
    io::write_model(&dir.join("model.json"), a.model)?;
    io::write_constraint(&dir.join("constraint.json"), a.constraint)?;
    io::write_dataset(&dir.join("data"), a.data)?;
    io::write_certificate(&dir.join("cert.json"), a.cert)?;
    io::write_report(&dir.join("report.json"), a.report)?;
    println!("artifacts written to {}", dir.display());
    Ok(())
}

fn finish(report: &VerificationReport) -> CmdResult {
    if report.overall {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_VERIFY_FAILED,
            message: "verification stage failed".into(),
        })
    }
}

fn surge_sim(model: PlantModel) -> SimulationSetup {
    SimulationSetup {
        model,
        x0: Vector::from_row_slice(&scenarios::SURGE_X0),
        horizon: 300.0,
        opts: IntegratorOptions::with_tol(1e-9),
    }
}

fn example1(out: Option<&Path>) -> CmdResult {
    let data = stage("data", scenarios::example1_data())?;
    let mut t = Table::new();
    t.add("U0", &rows(&printed::EX1_U0), &data.u0);
    t.add("X0", &rows(&printed::EX1_X0), &data.x0);
    t.add("X1", &rows(&printed::EX1_X1), &data.x1);
    t.add("F0", &rows(&printed::EX1_F0), &data.f0);
    t.print("data matrices", 1e-3);

    let constraint = stage("data", scenarios::passive_constraint())?;
    let lc = stage("data", scenarios::passive_lifted())?;
    let spec = SynthesisSpec::new(Method::CtPassive).with_l(scenarios::example1_l_hat());
    let cert = synthesize_stage(&data, &lc, &spec)?;
    let model = stage("data", scenarios::surge_plant(scenarios::surge_l(2.0)))?;
    let report = verify_stage(&cert, &data, &lc, &surge_sim(model.clone()))?;

    let mut raw = std::collections::BTreeMap::new();
    raw.insert("Y".to_string(), rows(&printed::EX1_Y));
    if let Ok((k, _, _)) = synth::extract_gains(&raw, &data) {
        let mut g = Table::new();
        g.add("K", &Mat::from_row_slice(1, 2, &printed::EX1_K), &k);
        g.print("gain from the reference decision variable", 1e-3);
    }
    if let Some(dir) = out {
        export(
            dir,
            &Artifacts {
                model: &model,
                constraint: &constraint,
                data: &data,
                cert: &cert,
                report: &report,
            },
        )?;
    }
    finish(&report)
}

fn example2(out: Option<&Path>) -> CmdResult {
    let data = stage("data", scenarios::example2_literal_data())?;
    let constraint = stage("data", scenarios::passive_constraint())?;
    let lc = stage("data", scenarios::passive_lifted())?;
    let cert = synthesize_stage(&data, &lc, &SynthesisSpec::new(Method::NlfbCtPassive))?;
    if let Some(m) = &cert.m {
        let v = m[(0, 0)];
        println!(
            "  M = {v:.4} {} -9/8",
            if v < -9.0 / 8.0 { "<" } else { ">=" }
        );
    }
    let model = stage("data", scenarios::example2_plant())?;
    let report = verify_stage(&cert, &data, &lc, &surge_sim(model.clone()))?;

    let recipe = stage("data", scenarios::example2_data())?;
    for (title, fix) in [
        ("gains from the reference decision variables", None),
        (
            "gains with the corrected entry Y1[3,0]",
            Some(printed::EX2_Y1_30_CONSISTENT),
        ),
    ] {
        let (mut y1, y2) = scenarios::example2_printed_y();
        if let Some(v) = fix {
            y1[(3, 0)] = v;
        }
        let mut raw = std::collections::BTreeMap::new();
        raw.insert(
            "W".to_string(),
            absstab::matcore::symmetrize(&(&recipe.x0 * &y1)),
        );
        raw.insert("Y1".to_string(), y1);
        raw.insert("Y2".to_string(), y2);
        if let Ok((k, Some(m), p)) = synth::extract_gains(&raw, &recipe) {
            let mut g = Table::new();
            g.add("K", &Mat::from_row_slice(1, 2, &printed::EX2_K), &k);
            g.add("M", &Mat::from_element(1, 1, printed::EX2_M), &m);
            g.add("P", &rows(&printed::EX2_P), p.as_mat());
            g.print(title, 1e-2);
        }
    }
    if let Some(dir) = out {
        export(
            dir,
            &Artifacts {
                model: &model,
                constraint: &constraint,
                data: &data,
                cert: &cert,
                report: &report,
            },
        )?;
    }
    finish(&report)
}

fn example3(out: Option<&Path>) -> CmdResult {
    let data = stage("data", scenarios::example1_data())?;
    let constraint = stage("data", scenarios::passive_constraint())?;
    let lc = stage("data", scenarios::passive_lifted())?;
    let cert = synthesize_stage(&data, &lc, &SynthesisSpec::new(Method::NlfbLinearOnly))?;
    let cl = stage("verification", verify::gain_closed_loop(&cert, &data))?;
    let r = (cert.p.as_mat() * &cl.bv + scenarios::surge_h().transpose()).amax();
    println!("  P L + H' residual {r:.3e} (data-based L)");
    let model = stage("data", scenarios::surge_plant(scenarios::surge_l(2.0)))?;
    let report = verify_stage(&cert, &data, &lc, &surge_sim(model.clone()))?;

    let pk = Mat::from_row_slice(1, 2, &printed::EX3_K);
    let pp = rows(&printed::EX3_P);
    let reference = stage(
        "comparison",
        SymMat::new(pp.clone()).and_then(|p| {
            Certificate::from_gains(
                Method::NlfbLinearOnly,
                &data,
                pk.clone(),
                None,
                p,
                None,
                1e-7,
            )
        }),
    )?;
    let pcl = stage("comparison", verify::gain_closed_loop(&reference, &data))?;
    let pr = (&pp * &pcl.bv + scenarios::surge_h().transpose()).amax();
    println!("reference K, P: P L + H' residual {pr:.3e} (data-based L)");
    if let Some(dir) = out {
        export(
            dir,
            &Artifacts {
                model: &model,
                constraint: &constraint,
                data: &data,
                cert: &cert,
                report: &report,
            },
        )?;
    }
    finish(&report)
}

fn dt_random(seed: u64, out: Option<&Path>) -> CmdResult {
    let inst = stage("data", scenarios::dt_random(seed))?;
    println!(
        "instance seed {seed}: n = {}, m = {}, T = {}, method {}",
        inst.data.n(),
        inst.data.m(),
        inst.data.samples(),
        inst.method
    );
    let spec = SynthesisSpec::new(inst.method).with_l(inst.model.l.clone());
    let cert = synthesize_stage(&inst.data, &inst.lifted, &spec)?;
    let sim = SimulationSetup {
        model: inst.model.clone(),
        x0: inst.x0.clone(),
        horizon: 400.0,
        opts: IntegratorOptions::default(),
    };
    let report = verify_stage(&cert, &inst.data, &inst.lifted, &sim)?;
    if let Some(dir) = out {
        export(
            dir,
            &Artifacts {
                model: &inst.model,
                constraint: &inst.constraint,
                data: &inst.data,
                cert: &cert,
                report: &report,
            },
        )?;
    }
    finish(&report)
}

pub fn run(name: DemoName, seed: u64, out: Option<&Path>) -> CmdResult {
    match name {
        DemoName::Example1 => example1(out),
        DemoName::Example2 => example2(out),
        DemoName::Example3 => example3(out),
        DemoName::DtRandom => dt_random(seed, out),
    }
}
