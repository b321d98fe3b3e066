//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fail.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::path::Path;
use std::sync::atomic::AtomicBool;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use nalgebra::UnitQuaternion;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rems::backend::bridge::{LoopbackMode, LoopbackServer};
use rems::backend::{
    AnalyticalBackend, Backend, BackendError, BridgeBackend, DeviceProfile, EmulatedBackend,
    ProfileOverrides,
};
use rems::cli::{execute, parse_config};
use rems::iosys::{
    load_trajectory, LogWriter, TeleopCommand, TeleopHub, TeleopInput, TrajectoryInput,
};
use rems::record::{convert_unit, DefRecord, UnitSpec};
use rems::robot::{
    builtin, integrate_pose, merge_definitions, ArmLink, ArmParams, DefinitionError,
    DiffDriveParams, MecanumParams, Pose2D, RobotDefinition, Twist2D, WheelPair,
};
use rems::runtime::{
    device_due, JobDone, ProcessContext, ProcessSystem, RobotSpec, RunConfig, RunReport, Runtime,
    StepSnapshot,
};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() {
    let criteria: [(&str, Check); 8] = [
        ("1 three-way woodbot comparison", c1_woodbot_comparison),
        ("2 device unit quirks", c2_unit_quirks),
        ("3 kinematics oracles", c3_kinematics_oracles),
        ("4 composition", c4_composition),
        ("5 scheduler properties", c5_scheduler),
        ("6 background jobs", c6_jobs),
        ("7 replay closure", c7_replay),
        ("8 bridge robustness", c8_bridge),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {name} ({secs:.2} s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name} ({secs:.2} s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or("empty log")?
        .split(',')
        .map(|s| s.to_string())
        .collect();
    let rows = lines
        .map(|l| {
            l.split(',')
                .map(|v| v.parse::<f64>().map_err(|e| e.to_string()))
                .collect()
        })
        .collect::<Result<_, _>>()?;
    Ok((header, rows))
}

fn column(rows: &[Vec<f64>], i: usize) -> Vec<f64> {
    rows.iter().map(|r| r[i]).collect()
}

/// Planar distance between the (x, y) columns of two state logs, per row.
fn distances(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(p, q)| (p[1] - q[1]).hypot(p[2] - q[2]))
        .collect()
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

// 1 ------------------------------------------------------------------------

const FIG_TRAJECTORY: &str = "\
t,wh.l[rad/s],wh.r[rad/s]
0,3,3
1.33,2,4.5
2.71,4.5,2
4.05,3.3,3.3
5.52,-2,2
6.18,4,4
7.77,0.3,0.3
8.4,2.5,3
";

fn c1_woodbot_comparison() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    std::fs::write(dir.path().join("traj.csv"), FIG_TRAJECTORY).map_err(|e| e.to_string())?;
    let out = dir.path().join("out");
    let config = format!(
        r#"
[run]
dt = 0.01
duration = 10.0
input = "trajectory:traj.csv"
out = {out:?}

[[robot]]
id = "model"
definition = "woodbot"
implementation = "analytical"

[[robot]]
id = "wood"
definition = "woodbot"
implementation = "emulated:woodbot-like"

[[robot]]
id = "sim"
definition = "woodbot"
implementation = "emulated:webots-like"

[robot.profile]
deadband = 0.0
quantization = 0.0
command_latency = 0.0
"#,
        out = out.display().to_string()
    );
    let cfg = parse_config(&config, dir.path(), &[]).map_err(|e| e.to_string())?;
    let started = Instant::now();
    let report = execute(&cfg, Arc::new(AtomicBool::new(false))).map_err(|e| e.to_string())?;
    let wall = started.elapsed().as_secs_f64();
    ensure!(report.steps == 1000, "{} steps", report.steps);

    let mut logs = BTreeMap::new();
    for id in ["model", "wood", "sim"] {
        for space in ["input", "state", "output"] {
            logs.insert(
                (id, space),
                read_csv(&out.join(format!("{id}_{space}.csv")))?.1,
            );
        }
    }
    let t_ref = column(&logs[&("model", "state")], 0);
    ensure!(t_ref.len() == 1000, "{} state rows", t_ref.len());
    for (key, rows) in &logs {
        ensure!(column(rows, 0) == t_ref, "t column of {key:?} differs");
    }
    let model = &logs[&("model", "state")];
    let sim_gap = max(&distances(model, &logs[&("sim", "state")]));
    let wood = distances(model, &logs[&("wood", "state")]);
    let (wood_final, wood_max) = (*wood.last().unwrap(), max(&wood));
    ensure!(
        sim_gap <= 1e-6,
        "analytical vs webots-like diverged by {sim_gap:e} m"
    );
    ensure!(wood_max > 0.0, "woodbot-like shows no divergence");
    ensure!(wood_max < 0.5, "woodbot-like diverged by {wood_max} m");
    ensure!(wall < 5.0, "run took {wall:.2} s");
    Ok(format!(
        "analytical vs webots-like max {sim_gap:.1e} m; woodbot-like final {wood_final:.4} m, max {wood_max:.4} m; wall {wall:.2} s"
    ))
}

// 2 ------------------------------------------------------------------------

fn effective_after_one_tick(
    profile: DeviceProfile,
    def: &RobotDefinition,
    input: &DefRecord,
) -> Result<Vec<f64>, String> {
    let mut b = EmulatedBackend::new(profile);
    b.init(def, 0.0, 1).map_err(|e| e.to_string())?;
    b.drive(input, 1.0).map_err(|e| e.to_string())?;
    let eff = b.effective_command().map_err(|e| e.to_string())?;
    Ok(eff.values().to_vec())
}

fn c2_unit_quirks() -> Outcome {
    let def = builtin("woodbot").map_err(|e| e.to_string())?;
    let r = 0.035;
    let rpm_per_rad_s = 60.0 / (2.0 * PI);
    let commands = [(2.0, -3.7), (0.3, -0.45), (20.0, -30.0), (7.31, 9.99)];
    let profile = |name: &str, o: ProfileOverrides| -> Result<DeviceProfile, String> {
        DeviceProfile::builtin(name)
            .and_then(|p| p.with_overrides(&o))
            .map_err(|e| e.to_string())
    };
    let unquantized = ProfileOverrides {
        quantization: Some(0.0),
        ..Default::default()
    };
    let factor = convert_unit(
        1.0,
        &UnitSpec::new("rad/s").unwrap(),
        &UnitSpec::new("rpm").unwrap(),
    )
    .map_err(|e| e.to_string())?;
    ensure!(
        (factor - rpm_per_rad_s).abs() <= 1e-9,
        "rad/s -> rpm factor {factor}"
    );

    let mut checked = 0;
    for (l, rr) in commands {
        let input = DefRecord::create(def.input_schema(), [("wh.l", l), ("wh.r", rr)])
            .map_err(|e| e.to_string())?;
        let cases: Vec<(&str, DeviceProfile, [f64; 2], f64)> = vec![
            (
                "webots-like",
                profile("webots-like", Default::default())?,
                [l, rr],
                1e-12,
            ),
            (
                "dynabot-like",
                profile("dynabot-like", unquantized.clone())?,
                [l * rpm_per_rad_s, rr * rpm_per_rad_s],
                1e-9,
            ),
            (
                "dynabot-like quantized",
                profile("dynabot-like", Default::default())?,
                [
                    (l * rpm_per_rad_s).round_ties_even(),
                    (rr * rpm_per_rad_s).round_ties_even(),
                ],
                1e-9,
            ),
            (
                "create2-like",
                profile("create2-like", Default::default())?,
                [
                    (l * r * 1000.0).round_ties_even().clamp(-500.0, 500.0),
                    (rr * r * 1000.0).round_ties_even().clamp(-500.0, 500.0),
                ],
                1e-9,
            ),
            (
                "woodbot-like",
                profile("woodbot-like", Default::default())?,
                [duty(l), duty(rr)],
                1e-9,
            ),
        ];
        for (name, p, expected, tol) in cases {
            let b = EmulatedBackend::new(p.clone());
            let native = b.to_native(&def, &input).map_err(|e| e.to_string())?;
            let effective = effective_after_one_tick(p, &def, &input)?;
            for (got, label) in [(&native, "converted"), (&effective, "effective")] {
                for (g, e) in got.iter().zip(expected) {
                    ensure!(
                        (g - e).abs() <= tol,
                        "{name} {label} command for ({l}, {rr}): {got:?} != {expected:?}"
                    );
                }
            }
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} profile/command pairs match; rpm factor {factor:.12}, counts clamp at 500, duty deadband zeroes |d| <= 0.05"
    ))
}

/// Woodbot-like duty by hand: scale by 1/10 rad/s, deadband 0.05, 0.01 steps, clamp to ±1.
fn duty(w: f64) -> f64 {
    let d = w / 10.0;
    let d = if d.abs() <= 0.05 { 0.0 } else { d };
    ((d / 0.01).round_ties_even() * 0.01).clamp(-1.0, 1.0) + 0.0
}

// 3 ------------------------------------------------------------------------

fn c3_kinematics_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 10_000;

    let mut worst_dd: f64 = 0.0;
    for _ in 0..n {
        let p = DiffDriveParams::new(rng.gen_range(0.01..0.5), rng.gen_range(0.05..1.5)).unwrap();
        let t = Twist2D::new(rng.gen_range(-2.0..2.0), 0.0, rng.gen_range(-4.0..4.0));
        let back = p.fk(p.ik(&t).map_err(|e| e.to_string())?);
        worst_dd = worst_dd
            .max((back.vx - t.vx).abs())
            .max((back.vy - t.vy).abs())
            .max((back.wz - t.wz).abs());
        let w = WheelPair {
            left: rng.gen_range(-20.0..20.0),
            right: rng.gen_range(-20.0..20.0),
        };
        let again = p.ik(&p.fk(w)).map_err(|e| e.to_string())?;
        worst_dd = worst_dd
            .max((again.left - w.left).abs())
            .max((again.right - w.right).abs());
    }
    ensure!(
        worst_dd <= 1e-12,
        "diff-drive round trip error {worst_dd:e}"
    );

    let mut worst_mec: f64 = 0.0;
    for _ in 0..n {
        let p = MecanumParams::new(
            rng.gen_range(0.01..0.2),
            rng.gen_range(0.05..0.5),
            rng.gen_range(0.05..0.5),
        )
        .unwrap();
        let t = Twist2D::new(
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-2.0..2.0),
            rng.gen_range(-4.0..4.0),
        );
        let back = p.fk(p.ik(&t));
        worst_mec = worst_mec
            .max((back.vx - t.vx).abs())
            .max((back.vy - t.vy).abs())
            .max((back.wz - t.wz).abs());
    }
    ensure!(worst_mec <= 1e-12, "mecanum round trip error {worst_mec:e}");

    // exact per-step update against classical RK4 on the unicycle ODE
    let dt = 1e-4;
    let steps = 100_000;
    let twist_at = |t: f64| {
        Twist2D::new(
            0.5 + 0.3 * (0.7 * t).sin(),
            0.1 * (0.3 * t).cos(),
            1.2 * (0.5 * t).sin() + 0.2,
        )
    };
    let mut exact = Pose2D::default();
    let mut oracle = [0.0f64; 3];
    let mut worst_pose: f64 = 0.0;
    for k in 0..steps {
        let tw = twist_at(k as f64 * dt);
        exact = integrate_pose(&exact, &tw, dt);
        oracle = rk4(oracle, &tw, dt);
        worst_pose = worst_pose
            .max((exact.x - oracle[0]).abs())
            .max((exact.y - oracle[1]).abs())
            .max(angle_gap(exact.theta, oracle[2]));
    }
    ensure!(
        worst_pose <= 1e-6,
        "pose integration vs RK4 differs by {worst_pose:e}"
    );

    let mut worst_arm: f64 = 0.0;
    for _ in 0..1000 {
        let mut links = Vec::new();
        let mut oracle_links = Vec::new();
        for _ in 0..6 {
            let axis = random_unit(&mut rng);
            let offset = [
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
                rng.gen_range(-0.3..0.3),
            ];
            let (roll, pitch, yaw) = (
                rng.gen_range(-PI..PI),
                rng.gen_range(-1.5..1.5),
                rng.gen_range(-PI..PI),
            );
            let rot = UnitQuaternion::from_euler_angles(roll, pitch, yaw);
            links.push(ArmLink::with_rotation(axis, offset, rot).map_err(|e| e.to_string())?);
            oracle_links.push((axis, offset, quat_matrix([rot.w, rot.i, rot.j, rot.k])));
        }
        let arm = ArmParams::new(links).map_err(|e| e.to_string())?;
        let q: Vec<f64> = (0..6).map(|_| rng.gen_range(-PI..PI)).collect();
        let pose = arm.fk(&q).map_err(|e| e.to_string())?;
        let want = arm_oracle(&oracle_links, &q);
        let o = pose.orientation;
        let got_r = quat_matrix([o.w, o.i, o.j, o.k]);
        for i in 0..3 {
            worst_arm = worst_arm.max((pose.position[i] - want[i][3]).abs());
            for j in 0..3 {
                worst_arm = worst_arm.max((got_r[i][j] - want[i][j]).abs());
            }
        }
    }
    ensure!(
        worst_arm <= 1e-9,
        "arm FK vs homogeneous-matrix oracle differs by {worst_arm:e}"
    );
    Ok(format!(
        "fk/ik worst {worst_dd:.1e} (diff) {worst_mec:.1e} (mecanum); pose vs RK4 {worst_pose:.1e}; arm {worst_arm:.1e}"
    ))
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn rk4(p: [f64; 3], tw: &Twist2D, h: f64) -> [f64; 3] {
    let f = |s: [f64; 3]| {
        let (sn, cs) = s[2].sin_cos();
        [tw.vx * cs - tw.vy * sn, tw.vx * sn + tw.vy * cs, tw.wz]
    };
    let add =
        |s: [f64; 3], k: [f64; 3], a: f64| [s[0] + a * k[0], s[1] + a * k[1], s[2] + a * k[2]];
    let k1 = f(p);
    let k2 = f(add(p, k1, h / 2.0));
    let k3 = f(add(p, k2, h / 2.0));
    let k4 = f(add(p, k3, h));
    [0, 1, 2].map(|i| p[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

fn random_unit(rng: &mut ChaCha8Rng) -> [f64; 3] {
    loop {
        let v = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0f64),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 0.1 && n <= 1.0 {
            return v.map(|c| c / n);
        }
    }
}

type Mat4 = [[f64; 4]; 4];

fn identity() -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    m
}

fn mul(a: &Mat4, b: &Mat4) -> Mat4 {
    let mut m = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            m[i][j] = (0..4).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    m
}

fn rotation(r: [[f64; 3]; 3]) -> Mat4 {
    let mut m = identity();
    for i in 0..3 {
        m[i][..3].copy_from_slice(&r[i]);
    }
    m
}

/// Rodrigues' formula.
fn axis_angle(k: [f64; 3], q: f64) -> [[f64; 3]; 3] {
    let (s, c) = q.sin_cos();
    let v = 1.0 - c;
    let [x, y, z] = k;
    [
        [c + x * x * v, x * y * v - z * s, x * z * v + y * s],
        [y * x * v + z * s, c + y * y * v, y * z * v - x * s],
        [z * x * v - y * s, z * y * v + x * s, c + z * z * v],
    ]
}

fn quat_matrix([w, x, y, z]: [f64; 4]) -> [[f64; 3]; 3] {
    [
        [
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
        ],
        [
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
        ],
        [
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ],
    ]
}

/// Joint axis, link offset, fixed link rotation.
type OracleLink = ([f64; 3], [f64; 3], [[f64; 3]; 3]);

fn arm_oracle(links: &[OracleLink], q: &[f64]) -> Mat4 {
    let mut tf = identity();
    for ((axis, offset, rot), &qi) in links.iter().zip(q) {
        let mut trans = identity();
        for i in 0..3 {
            trans[i][3] = offset[i];
        }
        tf = mul(&tf, &rotation(axis_angle(*axis, qi)));
        tf = mul(&tf, &trans);
        tf = mul(&tf, &rotation(*rot));
    }
    tf
}

// 4 ------------------------------------------------------------------------

fn c4_composition() -> Outcome {
    let base = builtin("omnibase").map_err(|e| e.to_string())?;
    let arm = builtin("arm5").map_err(|e| e.to_string())?;
    let merged = merge_definitions(&base, &arm).map_err(|e| e.to_string())?;
    let keys = merged.input_schema().len();
    ensure!(keys == 9, "merged input has {keys} keys");

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let values: Vec<f64> = merged
            .input_schema()
            .leaves()
            .iter()
            .map(|l| {
                let (lo, hi) = l.spec.range().unwrap_or((-5.0, 5.0));
                rng.gen_range(lo.max(-5.0)..hi.min(5.0))
            })
            .collect();
        let input =
            DefRecord::from_values(merged.input_schema(), values).map_err(|e| e.to_string())?;
        let whole = merged.drive_map(&input).map_err(|e| e.to_string())?;
        for part in [&base, &arm] {
            let sub = part
                .drive_map(
                    &input
                        .project(part.input_schema())
                        .map_err(|e| e.to_string())?,
                )
                .map_err(|e| e.to_string())?;
            for (k, v, _) in sub.iter() {
                let w = whole.get(k).ok_or(format!("merged command lacks `{k}`"))?;
                ensure!(w == v, "`{k}`: merged {w} != per-part {v}");
            }
        }
    }

    let dup = merge_definitions(&builtin("woodbot").unwrap(), &builtin("epuck").unwrap());
    ensure!(
        matches!(dup, Err(DefinitionError::KeyCollision(ref k)) if k.iter().any(|s| s == "input.wh.l")),
        "duplicate merge gave {dup:?}"
    );

    let moose = builtin("moose").map_err(|e| e.to_string())?;
    let input = DefRecord::create(moose.input_schema(), [("wh.l", 1.25), ("wh.r", -0.5)])
        .map_err(|e| e.to_string())?;
    let wheels = moose.expand_links(&input).map_err(|e| e.to_string())?;
    ensure!(
        wheels.schema().len() == 8,
        "moose expands to {} wheels",
        wheels.schema().len()
    );
    for (k, v, _) in wheels.iter() {
        let want = if k.starts_with("wh.l") { 1.25 } else { -0.5 };
        ensure!(v == want, "moose `{k}` = {v}");
    }
    Ok(format!(
        "omnibase+arm5 has {keys} input keys, dispatch matches per part; duplicate merge rejected; moose 2 -> 8 wheels"
    ))
}

// 5 ------------------------------------------------------------------------

/// Analytical model that errors once `t` passes `fail_after`.
struct Faulty {
    inner: AnalyticalBackend,
    fail_after: f64,
}

impl Backend for Faulty {
    fn name(&self) -> &str {
        "faulty"
    }
    fn supports(&self, def: &RobotDefinition) -> Result<(), BackendError> {
        self.inner.supports(def)
    }
    fn init(&mut self, def: &RobotDefinition, t0: f64, seed: u64) -> Result<(), BackendError> {
        self.inner.init(def, t0, seed)
    }
    fn drive(&mut self, input: &DefRecord, t: f64) -> Result<(), BackendError> {
        if t > self.fail_after {
            return Err(BackendError::ConnectionLost("injected fault".into()));
        }
        self.inner.drive(input, t)
    }
    fn sense(&mut self) -> Result<DefRecord, BackendError> {
        self.inner.sense()
    }
    fn observe_state(&mut self) -> Result<DefRecord, BackendError> {
        self.inner.observe_state()
    }
    fn close(&mut self) -> Result<(), BackendError> {
        self.inner.close()
    }
    fn device_timestep(&self) -> Option<f64> {
        None
    }
}

fn emulated(profile: &str) -> Box<dyn Backend> {
    Box::new(EmulatedBackend::new(
        DeviceProfile::builtin(profile).unwrap(),
    ))
}

fn fig_input() -> Box<TrajectoryInput> {
    let traj = rems::iosys::parse_trajectory(FIG_TRAJECTORY, "fig").unwrap();
    Box::new(TrajectoryInput::new("fig", traj))
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let e = e.unwrap();
        out.insert(
            e.file_name().to_string_lossy().into_owned(),
            std::fs::read(e.path()).unwrap(),
        );
    }
    out
}

fn fleet_run(dir: &Path, seed: u64) -> Result<RunReport, String> {
    let woodbot = builtin("woodbot").unwrap();
    let mut rt = Runtime::new(RunConfig {
        dt: 0.01,
        duration: 10.0,
        seed,
        ..RunConfig::default()
    })
    .map_err(|e| e.to_string())?;
    rt.add_robot(RobotSpec::new(
        "model",
        woodbot.clone(),
        Box::new(AnalyticalBackend::new()),
    ))
    .unwrap();
    rt.add_robot(RobotSpec::new(
        "wood",
        woodbot.clone(),
        emulated("woodbot-like"),
    ))
    .unwrap();
    rt.add_robot(RobotSpec::new(
        "dyna",
        woodbot.clone(),
        emulated("dynabot-like"),
    ))
    .unwrap();
    rt.add_robot(RobotSpec::new(
        "create",
        builtin("create2").unwrap(),
        emulated("create2-like"),
    ))
    .unwrap();
    rt.set_system_input(fig_input());
    rt.add_output(Box::new(LogWriter::new(dir)));
    rt.run().map_err(|e| e.to_string())
}

fn isolation_run(dir: &Path, with_faulty: bool) -> Result<(), String> {
    let woodbot = builtin("woodbot").unwrap();
    let mut rt = Runtime::new(RunConfig {
        dt: 0.01,
        duration: 3.0,
        seed: 9,
        ..RunConfig::default()
    })
    .map_err(|e| e.to_string())?;
    if with_faulty {
        let faulty = Faulty {
            inner: AnalyticalBackend::new(),
            fail_after: 1.0,
        };
        rt.add_robot(RobotSpec::new("a", woodbot.clone(), Box::new(faulty)))
            .unwrap();
    }
    rt.add_robot(RobotSpec::new("b", woodbot, emulated("woodbot-like")))
        .unwrap();
    rt.set_system_input(fig_input());
    rt.add_output(Box::new(LogWriter::for_robots(dir, ["b".to_string()])));
    let report = rt.run().map_err(|e| e.to_string())?;
    if with_faulty {
        ensure!(
            report.robot("a").is_some_and(|a| a.ended_stale),
            "robot a did not fail"
        );
    }
    Ok(())
}

fn c5_scheduler() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (d1, d2) = (root.path().join("run1"), root.path().join("run2"));
    let report = fleet_run(&d1, 42)?;
    ensure!(report.steps == 1000, "{} steps", report.steps);
    let reference: Vec<f64> = (1..=1000)
        .map(|k| rems::runtime::time_at(k, 0.01))
        .collect();
    for r in &report.robots {
        ensure!(
            r.observed_t == reference,
            "robot {} saw a different tick sequence",
            r.id
        );
    }

    let mut worst_fires = 0i64;
    for dt in [0.01, 0.001, 0.003, 0.007, 0.03] {
        let steps = rems::runtime::step_count(10.0, dt);
        let mut per_second = [0i64; 11];
        for k in 1..=steps {
            if device_due(k, dt, 5.0) {
                per_second[((k as f64 * dt) - 1e-9).floor() as usize] += 1;
            }
        }
        for (s, n) in per_second.iter().take(10).enumerate() {
            ensure!((n - 5).abs() <= 1, "dt {dt}: {n} fires in second {s}");
            worst_fires = worst_fires.max((n - 5).abs());
        }
    }

    fleet_run(&d2, 42)?;
    let (a, b) = (read_dir_bytes(&d1), read_dir_bytes(&d2));
    ensure!(a.len() == 12, "{} log files", a.len());
    ensure!(a == b, "seeded runs produced different logs");

    let (solo, paired) = (root.path().join("solo"), root.path().join("paired"));
    isolation_run(&solo, false)?;
    isolation_run(&paired, true)?;
    let (s, p) = (read_dir_bytes(&solo), read_dir_bytes(&paired));
    ensure!(
        s.len() == 3 && s == p,
        "robot b's logs change when robot a fails"
    );
    Ok(format!(
        "4 robots share 1000 ticks; 5 Hz gate off by at most {worst_fires} per second; {} logs byte-identical; b unaffected by a's failure",
        a.len()
    ))
}

// 6 ------------------------------------------------------------------------

/// Job name, submitted at, delivered at, wall instant, step time seen by the callback.
type Delivery = (String, f64, f64, Instant, f64);

struct JobSubmitter {
    durations_ms: Vec<u64>,
    finished: Arc<Mutex<HashMap<String, Instant>>>,
    delivered: Arc<Mutex<Vec<Delivery>>>,
}

impl ProcessSystem for JobSubmitter {
    fn process(&mut self, step: &StepSnapshot, ctx: &mut ProcessContext<'_>) {
        if step.k == 1 {
            for (i, ms) in self.durations_ms.iter().copied().enumerate() {
                let name = format!("job{i}");
                let finished = self.finished.clone();
                let key = name.clone();
                ctx.submit_job(&name, move || {
                    std::thread::sleep(Duration::from_millis(ms));
                    finished.lock().unwrap().insert(key, Instant::now());
                    Ok(serde_json::json!(ms))
                });
            }
        }
    }

    fn on_job_done(&mut self, done: &JobDone, ctx: &mut ProcessContext<'_>) {
        self.delivered.lock().unwrap().push((
            done.name.clone(),
            done.submitted_at,
            done.delivered_at,
            Instant::now(),
            ctx.t(),
        ));
    }
}

fn paced_run(
    durations_ms: Option<Vec<u64>>,
) -> Result<(RunReport, Vec<Delivery>, HashMap<String, Instant>), String> {
    let def = builtin("woodbot").unwrap();
    let mut rt = Runtime::new(RunConfig {
        dt: 0.01,
        duration: 3.0,
        realtime_factor: 1.0,
        ..RunConfig::default()
    })
    .map_err(|e| e.to_string())?;
    rt.add_robot(RobotSpec::new(
        "model",
        def.clone(),
        Box::new(AnalyticalBackend::new()),
    ))
    .unwrap();
    rt.add_robot(RobotSpec::new("sim", def, emulated("webots-like")))
        .unwrap();
    rt.set_system_input(fig_input());
    let finished = Arc::new(Mutex::new(HashMap::new()));
    let delivered = Arc::new(Mutex::new(Vec::new()));
    if let Some(d) = durations_ms {
        rt.add_process(Box::new(JobSubmitter {
            durations_ms: d,
            finished: finished.clone(),
            delivered: delivered.clone(),
        }));
    }
    let report = rt.run().map_err(|e| e.to_string())?;
    let delivered = delivered.lock().unwrap().clone();
    let finished = finished.lock().unwrap().clone();
    Ok((report, delivered, finished))
}

fn c6_jobs() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let durations: Vec<u64> = (0..10).map(|_| rng.gen_range(20..1200)).collect();

    // alternate runs so drift on the machine affects both sides alike;
    // compare the median p99 of five runs each
    let mut base_p99 = Vec::new();
    let mut jobs_p99 = Vec::new();
    let mut checked = None;
    for _ in 0..5 {
        base_p99.push(paced_run(None)?.0.step_time_p99_s);
        let (report, delivered, finished) = paced_run(Some(durations.clone()))?;
        jobs_p99.push(report.step_time_p99_s);
        if checked.is_none() {
            ensure!(
                delivered.len() == 10,
                "{} callbacks for 10 jobs",
                delivered.len()
            );
            let mut names: Vec<&String> = delivered.iter().map(|d| &d.0).collect();
            names.sort();
            names.dedup();
            ensure!(names.len() == 10, "a callback was delivered twice");
            for (name, submitted, at, when, ctx_t) in &delivered {
                let k = (at / 0.01).round();
                ensure!(
                    (at - k * 0.01).abs() < 1e-12,
                    "{name} delivered at {at}, not a step boundary"
                );
                ensure!(at == ctx_t, "{name} delivered at {at} during step {ctx_t}");
                ensure!(at > submitted, "{name} delivered at submission");
                let done = finished
                    .get(name)
                    .ok_or(format!("{name} delivered before it finished"))?;
                ensure!(when >= done, "{name} delivered before completion");
            }
            ensure!(report.jobs.done == 10, "{} jobs done", report.jobs.done);
            checked = Some(delivered.len());
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (b, j) = (median(&mut base_p99), median(&mut jobs_p99));
    let delta = (j - b).abs() / b;
    ensure!(
        delta < 0.2,
        "step p99 {:.1} us with jobs vs {:.1} us without ({:.0}% delta)",
        j * 1e6,
        b * 1e6,
        delta * 100.0
    );
    Ok(format!(
        "10 callbacks once each at step boundaries after completion; step p99 {:.1} us vs {:.1} us ({:.0}% delta)",
        j * 1e6,
        b * 1e6,
        delta * 100.0
    ))
}

// 7 ------------------------------------------------------------------------

fn teleop_fleet(dir: &Path, input: Box<dyn rems::runtime::InputSystem>) -> Result<(), String> {
    let mut rt = Runtime::new(RunConfig {
        dt: 0.01,
        duration: 6.0,
        seed: 7,
        ..RunConfig::default()
    })
    .map_err(|e| e.to_string())?;
    rt.add_robot(RobotSpec::new(
        "model",
        builtin("woodbot").unwrap(),
        Box::new(AnalyticalBackend::new()),
    ))
    .unwrap();
    rt.add_robot(RobotSpec::new(
        "sim",
        builtin("woodbot").unwrap(),
        emulated("webots-like"),
    ))
    .unwrap();
    rt.add_robot(RobotSpec::new(
        "wood",
        builtin("woodbot").unwrap(),
        emulated("woodbot-like"),
    ))
    .unwrap();
    rt.set_system_input(input);
    rt.add_output(Box::new(LogWriter::new(dir)));
    rt.run().map_err(|e| e.to_string())?;
    Ok(())
}

fn c7_replay() -> Outcome {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (live, replay) = (root.path().join("live"), root.path().join("replay"));
    let cmd = |keys: &[(&str, f64)]| TeleopCommand::new("script", keys);
    let script = vec![
        (0.5, cmd(&[("fwd", 1.0)])),
        (1.73, cmd(&[("fwd", 1.0), ("turn", 0.5)])),
        (2.4, cmd(&[("turn", -1.0)])),
        (3.05, cmd(&[("fwd", -0.6), ("turn", 0.2)])),
        (4.5, cmd(&[])),
    ];
    teleop_fleet(
        &live,
        Box::new(TeleopInput::scripted(TeleopHub::new(), script)),
    )?;

    let mut identical = 0;
    for id in ["model", "sim", "wood"] {
        let traj =
            load_trajectory(live.join(format!("{id}_input.csv"))).map_err(|e| e.to_string())?;
        let dir = replay.join(id);
        teleop_fleet(&dir, Box::new(TrajectoryInput::new("replay", traj)))?;
        let original =
            std::fs::read(live.join(format!("{id}_state.csv"))).map_err(|e| e.to_string())?;
        let replayed =
            std::fs::read(dir.join(format!("{id}_state.csv"))).map_err(|e| e.to_string())?;
        ensure!(original == replayed, "replayed state log of {id} differs");
        let (_, rows) = read_csv(&live.join(format!("{id}_state.csv")))?;
        ensure!(rows.last().is_some_and(|r| r[1] != 0.0), "{id} never moved");
        identical += 1;
    }
    Ok(format!(
        "{identical} state logs reproduced byte-for-byte from recorded input logs"
    ))
}

// 8 ------------------------------------------------------------------------

fn c8_bridge() -> Outcome {
    let def = builtin("woodbot").map_err(|e| e.to_string())?;
    let rate = 20.0;
    let server = LoopbackServer::start(def.clone(), LoopbackMode::Model, "127.0.0.1:0")
        .map_err(|e| e.to_string())?;
    let mut b = BridgeBackend::new(server.url())
        .with_rate(rate)
        .map_err(|e| e.to_string())?;
    b.init(&def, 0.0, 0).map_err(|e| e.to_string())?;
    let input = DefRecord::create(def.input_schema(), [("wh.l", 2.0), ("wh.r", 2.0)])
        .map_err(|e| e.to_string())?;
    let mut worst = Duration::ZERO;
    for k in 1..=20 {
        let started = Instant::now();
        b.drive(&input, f64::from(k) / rate)
            .map_err(|e| e.to_string())?;
        let reading = b.sense().map_err(|e| e.to_string())?;
        worst = worst.max(started.elapsed());
        ensure!(!reading.is_stale(), "reading {k} stale");
    }
    let budget = Duration::from_secs_f64(2.0 / rate);
    ensure!(
        worst <= budget,
        "round trip {worst:?} exceeds two ticks ({budget:?})"
    );
    let x = b
        .observe_state()
        .map_err(|e| e.to_string())?
        .get("x")
        .unwrap_or(f64::NAN);
    ensure!(
        (x - 2.0 * 0.035).abs() < 1e-9,
        "bridged model reached x = {x}"
    );
    b.close().map_err(|e| e.to_string())?;

    let silent = LoopbackServer::start(def.clone(), LoopbackMode::Silent, "127.0.0.1:0")
        .map_err(|e| e.to_string())?;
    let mut rt = Runtime::new(RunConfig {
        dt: 0.01,
        duration: 2.0,
        ..RunConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let bridged = BridgeBackend::new(silent.url())
        .with_rate(rate)
        .map_err(|e| e.to_string())?;
    let timeout = bridged.sense_timeout().as_secs_f64();
    rt.add_robot(RobotSpec::new("remote", def.clone(), Box::new(bridged)))
        .unwrap();
    rt.add_robot(RobotSpec::new(
        "local",
        def.clone(),
        Box::new(AnalyticalBackend::new()),
    ))
    .unwrap();
    rt.set_system_input(fig_input());
    let report = rt.run().map_err(|e| e.to_string())?;
    let remote = report.robot("remote").ok_or("no remote report")?;
    let local = report.robot("local").ok_or("no local report")?;
    let first_stale = remote
        .stale_intervals
        .first()
        .map(|s| s[0])
        .ok_or("silent robot never went stale")?;
    ensure!(
        first_stale <= 0.01 + 1e-9,
        "stale flagged only at t = {first_stale}"
    );
    ensure!(remote.ended_stale, "silent robot recovered");
    ensure!(
        local.steps_completed == report.steps && !local.ended_stale,
        "local robot was held up"
    );
    ensure!(
        report.wall_time_s < 2.0 * timeout + 1.0,
        "fleet blocked for {:.2} s",
        report.wall_time_s
    );

    let other = LoopbackServer::start(
        builtin("create2").unwrap(),
        LoopbackMode::Model,
        "127.0.0.1:0",
    )
    .map_err(|e| e.to_string())?;
    let mut b = BridgeBackend::new(other.url());
    let mismatch = b.init(&def, 0.0, 0);
    ensure!(
        matches!(mismatch, Err(BackendError::SchemaHashMismatch { .. })),
        "mismatched schema accepted: {mismatch:?}"
    );
    Ok(format!(
        "round trip worst {:.2} ms (budget {:.0} ms); silent robot stale from t = {first_stale}, fleet finished in {:.2} s; hash mismatch rejected",
        worst.as_secs_f64() * 1e3,
        budget.as_secs_f64() * 1e3,
        report.wall_time_s
    ))
}
