//! Acceptance gate. Each test prints one `criterion N: PASS|FAIL` line and
//! then asserts it. Tests hold a shared lock so wall-clock budgets are not
//! distorted by each other.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;
use std::time::Instant;

use mglc::pipeline;
use mglc_core::diffusion::{
    ddim_step, forward_noise, tweedie, DenoiserConfig, NoiseSchedule, ScheduleConfig, TrainConfig,
};
use mglc_core::dynamics::{Benchmark, ControllerParams, DEFAULT_GAIN};
use mglc_core::grid::{GridField, GridSpec};
use mglc_core::guidance::{grad_psi_lt, loss_lt, synthesize, SynthesisConfig};
use mglc_core::lyapunov::{DatasetConfig, Family};
use mglc_core::rng;
use mglc_core::tinynet::{Activation, Network};
use mglc_core::verify::{dopri5, Rk45Config, RolloutConfig};
use rand::Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(n: u32, pass: bool, detail: &str) {
    println!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" });
}

fn random_field(spec: GridSpec, seed: u64, index: u64) -> GridField {
    let mut data = vec![0.0; spec.field_len()];
    rng::fill_normal(&mut rng::stream(seed, index), &mut data);
    GridField::from_vec(spec, data).unwrap()
}

fn max_abs_diff(a: &GridField, b: &GridField) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn fixture_controllers_stabilise() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cfg = RolloutConfig { seed: 1, ..Default::default() };
    let mut pass = true;
    let mut parts = Vec::new();
    for b in Benchmark::ALL {
        let rep = pipeline::verify(b, &b.reported_controller(), &cfg).unwrap();
        let need = if b.is_stochastic() { 0.99 } else { 1.0 };
        pass &= rep.fraction >= need;
        parts.push(format!("{b} {}/{}", rep.converged, rep.outcomes.len()));
    }
    let secs = start.elapsed().as_secs_f64();
    pass &= secs < 120.0;
    report(1, pass, &format!("({}; {secs:.1} s)", parts.join(", ")));
    assert!(pass);
}

#[test]
fn dataset_identities() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let start = Instant::now();
    let cfg = DatasetConfig { n1: 10, n2: 10, seed: 3, ..Default::default() };
    let ds = mglc::parallel::build_dataset(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut identity = 0.0f64;
    let mut bound = f64::NEG_INFINITY;
    let mut worst_certificate = 1.0f64;
    for r in &ds.records {
        match r.family() {
            Family::SecondOrder => {
                let (i, b) = r.second_order_residuals().unwrap();
                identity = identity.max(i);
                bound = bound.max(b);
            }
            Family::Perturbed => {
                worst_certificate = worst_certificate.min(r.certificate(cfg.lyapunov.exclusion_radius).fraction());
            }
        }
    }
    let pass = identity <= 1e-9 && bound <= 1e-9 && worst_certificate >= 0.99 && secs < 60.0;
    report(
        2,
        pass,
        &format!(
            "(identity residual {identity:.2e}, bound excess {bound:.2e}, worst certificate {worst_certificate:.4}, \
             acceptance rate {:.2}; {secs:.1} s)",
            ds.acceptance_rate().unwrap_or(1.0)
        ),
    );
    assert!(pass);
}

#[test]
fn diffusion_algebra() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let steps = 200;
    let schedule = NoiseSchedule::cosine(steps).unwrap();
    let spec = GridSpec::square(4.0, 16);
    let x0 = random_field(spec, 5, 0);
    let eps = random_field(spec, 5, 1);

    let mut round_trip = 0.0f64;
    for t in [1, steps / 2, steps - 1] {
        let x_t = forward_noise(&x0, &eps, t, &schedule).unwrap();
        round_trip = round_trip.max(max_abs_diff(&tweedie(&x_t, &eps, t, &schedule).unwrap(), &x0));
    }

    // with the exact noise, a DDIM step lands on the forward corruption at t';
    // ᾱ_T is zero, so steps leaving t = T carry no information about x0
    let mut ddim = 0.0f64;
    let times = schedule.ddim_timesteps();
    for w in times.windows(2) {
        let (t, t_prev) = (w[0].max(w[1]), w[0].min(w[1]));
        if t == steps {
            continue;
        }
        let x_t = forward_noise(&x0, &eps, t, &schedule).unwrap();
        let (next, est) = ddim_step(&x_t, &eps, t, t_prev, &schedule).unwrap();
        ddim = ddim.max(max_abs_diff(&next, &forward_noise(&x0, &eps, t_prev, &schedule).unwrap()));
        ddim = ddim.max(max_abs_diff(&est, &x0));
    }

    let monotone = (0..steps).all(|t| schedule.alpha_bar(t + 1) < schedule.alpha_bar(t));
    let start = schedule.alpha_bar(0);
    let end = schedule.alpha_bar(steps);
    let pass = round_trip <= 1e-6 && ddim <= 1e-6 && monotone && (1.0 - start).abs() <= 1e-12 && end <= 1e-8;
    report(
        3,
        pass,
        &format!("(round trip {round_trip:.2e}, ddim identity {ddim:.2e}, ᾱ_0 = {start}, ᾱ_T = {end:.2e}, monotone {monotone})"),
    );
    assert!(pass);
}

fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-8);
    diff / scale
}

fn network_case(seed: u64) -> f64 {
    let mut r = rng::stream(seed, 0);
    let acts = [Activation::Tanh, Activation::Silu, Activation::Identity];
    let input = r.random_range(1..6);
    let depth = r.random_range(1..4);
    let mut layers: Vec<(usize, Activation)> =
        (0..depth).map(|_| (r.random_range(1..8), acts[r.random_range(0..3)])).collect();
    layers.push((r.random_range(1..4), Activation::Identity));
    let mut net = Network::<f64>::new(input, &layers).unwrap();
    net.init_fan_in(&mut r);
    let x: Vec<f64> = (0..input).map(|_| r.random_range(-2.0..2.0)).collect();
    let w: Vec<f64> = (0..net.output_dim()).map(|_| r.random_range(-1.0..1.0)).collect();
    let objective = |n: &Network<f64>| n.forward(&x).unwrap().iter().zip(&w).map(|(o, w)| o * w).sum::<f64>();

    let tape = net.forward_tape(&x).unwrap();
    let analytic = net.backward(&tape, &w).unwrap().params;
    let h = 1e-6;
    let numeric: Vec<f64> = (0..net.num_params())
        .map(|k| {
            let base = net.params()[k];
            net.params_mut()[k] = base + h;
            let up = objective(&net);
            net.params_mut()[k] = base - h;
            let down = objective(&net);
            net.params_mut()[k] = base;
            (up - down) / (2.0 * h)
        })
        .collect();
    relative_error(&analytic, &numeric)
}

fn guidance_case(seed: u64) -> f64 {
    let mut r = rng::stream(seed, 1);
    let system = [Benchmark::Pendulum, Benchmark::Duffing, Benchmark::VanDerPol][r.random_range(0..3)];
    let sys = system.instantiate(rng::stream(seed, 2));
    let spec = GridSpec::square(r.random_range(1.0..4.0), r.random_range(4..12));
    let psi = [r.random_range(-3.0..3.0), r.random_range(-3.0..3.0)];
    let gain = r.random_range(0.5..DEFAULT_GAIN);
    let a = r.random_range(0.1..2.0);
    let mut x0 = random_field(spec, seed, 3);
    x0.as_mut_slice().iter_mut().for_each(|v| *v *= 10.0);

    let at = |p: [f64; 2]| loss_lt(&sys, &ControllerParams::new(p, gain), &x0, a).unwrap();
    let analytic = grad_psi_lt(&sys, &ControllerParams::new(psi, gain), &x0, a).unwrap();
    let numeric: Vec<f64> = (0..2)
        .map(|i| {
            let h = 1e-6 * psi[i].abs().max(1.0);
            let (mut up, mut down) = (psi, psi);
            up[i] += h;
            down[i] -= h;
            (at(up) - at(down)) / (2.0 * h)
        })
        .collect();
    relative_error(&analytic, &numeric)
}

#[test]
fn gradients_match_finite_differences() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let cases = 60;
    let net = (0..cases).map(network_case).fold(0.0, f64::max);
    let guide = (0..cases).map(guidance_case).fold(0.0, f64::max);
    let pass = net <= 1e-4 && guide <= 1e-4;
    report(4, pass, &format!("({cases} configurations each: network {net:.2e}, ∇ψ L_t {guide:.2e})"));
    assert!(pass);
}

#[test]
fn desk_scale_synthesis() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let grid = GridSpec::square(4.0, 16);
    let t0 = Instant::now();
    let ds = mglc::parallel::build_dataset(&DatasetConfig { n1: 100, n2: 100, grid, seed: 1, ..Default::default() })
        .unwrap();
    let dataset_secs = t0.elapsed().as_secs_f64();

    let t0 = Instant::now();
    let schedule = ScheduleConfig { steps: 200, sampling_steps: 50 };
    let denoiser = DenoiserConfig { hidden: 256, depth: 3, embedding: 32 };
    let mut ck = pipeline::init_checkpoint(&ds, schedule, denoiser, 2).unwrap();
    let init = pipeline::evaluation_loss(&ck, &ds).unwrap();
    let chunk = TrainConfig { epochs: 200, seed: 3, ..Default::default() };
    let mut ratio = 1.0;
    for _ in 0..10 {
        pipeline::train(&mut ck, &ds, &chunk).unwrap();
        ratio = pipeline::evaluation_loss(&ck, &ds).unwrap() / init;
        if ratio < 0.8 {
            break;
        }
    }
    let train_secs = t0.elapsed().as_secs_f64();
    let trained = ratio < 0.8;

    let cfg = SynthesisConfig { seed: 11, restarts: 4, ..Default::default() };
    let verify_cfg = RolloutConfig { seed: 4, ..Default::default() };
    let mut pass = trained;
    let mut parts = Vec::new();
    for system in [Benchmark::Pendulum, Benchmark::Duffing] {
        let plant = system.instantiate(rng::stream(cfg.seed, 0));
        let t0 = Instant::now();
        for k in 0..cfg.restarts {
            synthesize(&plant, &ck, &cfg, k).unwrap();
        }
        let synth_secs = t0.elapsed().as_secs_f64();
        let outcome = pipeline::synthesize_best(system, &ck, &cfg, &verify_cfg).unwrap();
        let fraction = outcome.report.fraction;
        pass &= fraction >= 0.95 && synth_secs <= 60.0;
        let all: Vec<String> = outcome.restarts.iter().map(|r| format!("{:.2}", r.fraction)).collect();
        parts.push(format!(
            "{system} best {fraction:.2} [{}] ψ = ({:.4}, {:.4}), synthesis {synth_secs:.2} s",
            all.join(" "),
            outcome.controller().psi[0],
            outcome.controller().psi[1]
        ));
    }
    report(
        5,
        pass,
        &format!(
            "(dataset {dataset_secs:.0} s, training {train_secs:.0} s to loss ratio {ratio:.3}, {} steps; {})",
            ck.meta.steps,
            parts.join("; ")
        ),
    );
    assert!(pass);
}

const SMALL: &str = r#"
[dataset]
n1 = 2
n2 = 4
seed = 9
[dataset.grid]
x_min = -4.0
x_max = 4.0
y_min = -4.0
y_max = 4.0
resolution = 8
[schedule]
steps = 40
sampling_steps = 10
[denoiser]
hidden = 32
depth = 2
embedding = 8
[train]
epochs = 5
batch_size = 4
[synthesis]
restarts = 2
[verify]
count = 12
"#;

struct Workdir {
    dir: tempfile::TempDir,
}

impl Workdir {
    fn p(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.p(name).to_str().unwrap().to_string()
    }

    fn run(&self, threads: usize, args: &[&str]) {
        let out = Command::new(env!("CARGO_BIN_EXE_mglc"))
            .arg("--config")
            .arg(self.p("run.toml"))
            .arg("--threads")
            .arg(threads.to_string())
            .args(args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn same(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}

#[test]
fn stages_are_deterministic() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let w = Workdir { dir: tempfile::tempdir().unwrap() };
    std::fs::write(w.p("run.toml"), SMALL).unwrap();
    let mut checks = Vec::new();

    for (name, threads) in [("d1.ds", 1), ("d2.ds", 1), ("d3.ds", 3)] {
        w.run(threads, &["gen-dataset", "--out", &w.s(name)]);
    }
    checks.push(("gen-dataset repeat", same(&w.p("d1.ds"), &w.p("d2.ds"))));
    checks.push(("gen-dataset threads", same(&w.p("d1.ds"), &w.p("d3.ds"))));

    for name in ["a.ck", "b.ck"] {
        w.run(2, &["train", "--dataset", &w.s("d1.ds"), "--out", &w.s(name)]);
    }
    checks.push(("train repeat", same(&w.p("a.ck"), &w.p("b.ck"))));

    for dir in ["sa", "sb"] {
        w.run(2, &["synthesize", "--checkpoint", &w.s("a.ck"), "--system", "duffing", "--out-dir", &w.s(dir)]);
    }
    checks.push(("synthesize repeat", same(&w.p("sa/trace.mglctr"), &w.p("sb/trace.mglctr"))));
    checks.push(("synthesize controller", same(&w.p("sa/controller.json"), &w.p("sb/controller.json"))));

    for (dir, threads) in [("va", 1), ("vb", 1), ("vc", 3)] {
        let controller = w.s("sa/controller.json");
        w.run(threads, &["verify", "--system", "duffing", "--controller", &controller, "--out-dir", &w.s(dir)]);
    }
    checks.push(("verify repeat", same(&w.p("va/report.json"), &w.p("vb/report.json"))));
    checks.push(("verify threads", same(&w.p("va/report.json"), &w.p("vc/report.json"))));
    checks.push((
        "verify trajectories",
        same(&w.p("va/trajectories/traj_005.csv"), &w.p("vc/trajectories/traj_005.csv")),
    ));

    let pass = checks.iter().all(|(_, ok)| *ok);
    let failed: Vec<&str> = checks.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    report(6, pass, &format!("({} byte comparisons; differing: {failed:?})", checks.len()));
    assert!(pass);
}

#[test]
fn rk45_accuracy_tracks_tolerance() {
    let _g = SERIAL.lock().unwrap_or_else(|e| e.into_inner());
    let t_end = 5.0;
    let exact = f64::exp(-t_end);
    let error_at = |rtol: f64| {
        let cfg = Rk45Config { rtol, atol: 1e-3 * rtol, ..Default::default() };
        let sol = dopri5(|_, y: &[f64; 1]| [-y[0]], 0.0, [1.0], &[t_end], &cfg).unwrap();
        (sol.states[0][0] - exact).abs()
    };
    let rtols: Vec<f64> = (4..=10).map(|k| 10f64.powi(-k)).collect();
    let errors: Vec<f64> = rtols.iter().map(|&r| error_at(r)).collect();
    // least-squares slope of log error against log rtol
    let xs: Vec<f64> = rtols.iter().map(|r| r.log10()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.log10()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let slope = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let at_default = error_at(1e-6);
    let shrinking = errors.windows(2).all(|w| w[1] < w[0]);
    let pass = at_default <= 1e-6 && (0.8..=1.2).contains(&slope) && shrinking;
    let listed: Vec<String> = errors.iter().map(|e| format!("{e:.1e}")).collect();
    report(7, pass, &format!("(error at rtol 1e-6 {at_default:.2e}, slope {slope:.3}, errors [{}])", listed.join(" ")));
    assert!(pass);
}
