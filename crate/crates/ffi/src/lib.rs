//! C interface to the driving environment, the scripted guardian, trained
//! policies and the risk bound.
//!
//! Every function returns a [`HacoStatus`]. On failure the message is
//! available from [`haco_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use haco::env::{generate_map, Difficulty, DrivingEnv, EnvConfig, MapSpec};
use haco::guardian::{Guardian, GuardianConfig, ScriptedGuardian};
use haco::learner::{intervention_cost, LearnerState};
use haco::numeric::Checkpoint;
use haco::theory::{risk_bound, BoundInputs};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HacoStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    BufferTooSmall = 3,
    EpisodeOver = 4,
    Io = 5,
    Numeric = 6,
    Panic = 7,
}

/// Outcome of one environment step.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct HacoStepInfo {
    pub reward: f64,
    /// New obstacle contacts this step.
    pub env_cost: u32,
    pub success: bool,
    pub out_of_road: bool,
    pub horizon: bool,
    pub terminal: bool,
}

/// Environment, its map and a scripted guardian for that map.
pub struct HacoEnv {
    env: DrivingEnv,
    map: Arc<MapSpec>,
    guardian: ScriptedGuardian,
}

/// A trained policy loaded from a checkpoint.
pub struct HacoPolicy {
    learner: LearnerState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn fail(status: HacoStatus, msg: impl Into<String>) -> HacoStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> HacoStatus) -> HacoStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(HacoStatus::Panic, "internal panic"),
    }
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on this thread.
#[no_mangle]
pub extern "C" fn haco_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Cosine intervention cost `1 - cos(a_n, a_h)`. Zero-length actions cost 1.
///
/// # Safety
/// `a_n` and `a_h` point to two doubles each; `out` to one.
#[no_mangle]
pub unsafe extern "C" fn haco_intervention_cost(a_n: *const f64, a_h: *const f64, out: *mut f64) -> HacoStatus {
    guard(|| {
        if a_n.is_null() || a_h.is_null() || out.is_null() {
            return fail(HacoStatus::NullPointer, "null argument");
        }
        let a_n = [*a_n, *a_n.add(1)];
        let a_h = [*a_h, *a_h.add(1)];
        if a_n.iter().chain(&a_h).any(|v| !v.is_finite()) {
            return fail(HacoStatus::InvalidArgument, "actions must be finite");
        }
        *out = intervention_cost(a_n, a_h).0;
        HacoStatus::Ok
    })
}

/// Upper bound on the discounted training failure probability.
///
/// # Safety
/// `out` points to one double.
#[no_mangle]
pub unsafe extern "C" fn haco_risk_bound(
    epsilon: f64,
    kappa: f64,
    k_prime: f64,
    gamma: f64,
    out: *mut f64,
) -> HacoStatus {
    guard(|| {
        if out.is_null() {
            return fail(HacoStatus::NullPointer, "null argument");
        }
        match risk_bound(&BoundInputs {
            epsilon,
            kappa,
            k_prime,
            gamma,
        }) {
            Ok(b) => {
                *out = b;
                HacoStatus::Ok
            }
            Err(e) => fail(HacoStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Observation length for the default environment.
#[no_mangle]
pub extern "C" fn haco_obs_dim() -> usize {
    EnvConfig::default().obs_dim()
}

/// Creates an environment on the map generated from `map_seed`.
///
/// # Safety
/// `out` points to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn haco_env_new(map_seed: u64, out: *mut *mut HacoEnv) -> HacoStatus {
    guard(|| {
        if out.is_null() {
            return fail(HacoStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let cfg = EnvConfig::default();
        let map = match generate_map(map_seed, &Difficulty::default(), &cfg) {
            Ok(m) => Arc::new(m),
            Err(e) => return fail(HacoStatus::InvalidArgument, e.to_string()),
        };
        let env = Box::new(HacoEnv {
            env: DrivingEnv::new(cfg),
            map,
            guardian: ScriptedGuardian::new(GuardianConfig::default()),
        });
        *out = Box::into_raw(env);
        HacoStatus::Ok
    })
}

/// # Safety
/// `env` is null or a handle from [`haco_env_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn haco_env_free(env: *mut HacoEnv) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

unsafe fn write_obs(obs: &[f64], out: *mut f64, len: usize) -> HacoStatus {
    if out.is_null() {
        return fail(HacoStatus::NullPointer, "null observation buffer");
    }
    if len < obs.len() {
        return fail(
            HacoStatus::BufferTooSmall,
            format!("observation needs {} values, buffer holds {len}", obs.len()),
        );
    }
    ptr::copy_nonoverlapping(obs.as_ptr(), out, obs.len());
    HacoStatus::Ok
}

/// Starts a new episode and writes the first observation.
///
/// # Safety
/// `env` is a live handle; `obs` holds `obs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn haco_env_reset(env: *mut HacoEnv, obs: *mut f64, obs_len: usize) -> HacoStatus {
    guard(|| {
        let Some(h) = env.as_mut() else {
            return fail(HacoStatus::NullPointer, "null env");
        };
        h.guardian.reset();
        let o = h.env.reset(h.map.clone());
        write_obs(&o, obs, obs_len)
    })
}

/// Applies `[steering, throttle]` (clamped to `[-1, 1]`), writes the next
/// observation and the step outcome.
///
/// # Safety
/// `env` is a live handle; `action` holds two doubles; `obs` holds
/// `obs_len` doubles; `info` is null or points to one [`HacoStepInfo`].
#[no_mangle]
pub unsafe extern "C" fn haco_env_step(
    env: *mut HacoEnv,
    action: *const f64,
    obs: *mut f64,
    obs_len: usize,
    info: *mut HacoStepInfo,
) -> HacoStatus {
    guard(|| {
        let Some(h) = env.as_mut() else {
            return fail(HacoStatus::NullPointer, "null env");
        };
        if action.is_null() {
            return fail(HacoStatus::NullPointer, "null action");
        }
        let a = [*action, *action.add(1)];
        if !a.iter().all(|v| v.is_finite()) {
            return fail(HacoStatus::InvalidArgument, "action must be finite");
        }
        let r = match h.env.step(a) {
            Ok(r) => r,
            Err(e) => return fail(HacoStatus::EpisodeOver, e.to_string()),
        };
        if let Some(i) = info.as_mut() {
            *i = HacoStepInfo {
                reward: r.reward,
                env_cost: r.env_cost,
                success: r.success,
                out_of_road: r.out_of_road,
                horizon: r.horizon,
                terminal: r.terminal(),
            };
        }
        write_obs(&r.observation, obs, obs_len)
    })
}

/// Asks the scripted guardian about `proposed`. Writes whether it takes
/// over and, if so, the expert action into `expert` (otherwise `proposed`).
///
/// # Safety
/// `env` is a live handle; `proposed` and `expert` hold two doubles;
/// `intervene` points to one bool.
#[no_mangle]
pub unsafe extern "C" fn haco_env_guardian(
    env: *mut HacoEnv,
    proposed: *const f64,
    intervene: *mut bool,
    expert: *mut f64,
) -> HacoStatus {
    guard(|| {
        let Some(h) = env.as_mut() else {
            return fail(HacoStatus::NullPointer, "null env");
        };
        if proposed.is_null() || intervene.is_null() || expert.is_null() {
            return fail(HacoStatus::NullPointer, "null argument");
        }
        if !h.env.is_active() {
            return fail(HacoStatus::EpisodeOver, "episode is not active; call reset first");
        }
        let a = [*proposed, *proposed.add(1)];
        let cfg = *h.env.config();
        let d = h.guardian.decide(h.env.ego(), a, &h.map, &cfg);
        let out = if d.intervene { d.expert_action.unwrap_or(a) } else { a };
        *intervene = d.intervene;
        *expert = out[0];
        *expert.add(1) = out[1];
        HacoStatus::Ok
    })
}

/// Loads a policy checkpoint.
///
/// # Safety
/// `path` is a NUL-terminated UTF-8 string; `out` points to writable
/// storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn haco_policy_load(path: *const c_char, out: *mut *mut HacoPolicy) -> HacoStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return fail(HacoStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let Ok(p) = CStr::from_ptr(path).to_str() else {
            return fail(HacoStatus::InvalidArgument, "path is not UTF-8");
        };
        let ckpt = match Checkpoint::load(Path::new(p)) {
            Ok(c) => c,
            Err(e) => return fail(HacoStatus::Io, e.to_string()),
        };
        match LearnerState::from_checkpoint(&ckpt, None) {
            Ok(learner) => {
                *out = Box::into_raw(Box::new(HacoPolicy { learner }));
                HacoStatus::Ok
            }
            Err(e) => fail(HacoStatus::Io, e.to_string()),
        }
    })
}

/// # Safety
/// `policy` is null or a handle from [`haco_policy_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn haco_policy_free(policy: *mut HacoPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

unsafe fn read_obs<'a>(p: &HacoPolicy, obs: *const f64, obs_len: usize) -> Result<&'a [f64], HacoStatus> {
    if obs.is_null() {
        return Err(fail(HacoStatus::NullPointer, "null observation"));
    }
    if obs_len != p.learner.obs_dim() {
        return Err(fail(
            HacoStatus::InvalidArgument,
            format!(
                "policy expects {} observation values, got {obs_len}",
                p.learner.obs_dim()
            ),
        ));
    }
    Ok(std::slice::from_raw_parts(obs, obs_len))
}

/// Deterministic (mean) action for an observation.
///
/// # Safety
/// `policy` is a live handle; `obs` holds `obs_len` doubles; `action`
/// holds two.
#[no_mangle]
pub unsafe extern "C" fn haco_policy_act(
    policy: *const HacoPolicy,
    obs: *const f64,
    obs_len: usize,
    action: *mut f64,
) -> HacoStatus {
    guard(|| {
        let Some(p) = policy.as_ref() else {
            return fail(HacoStatus::NullPointer, "null policy");
        };
        if action.is_null() {
            return fail(HacoStatus::NullPointer, "null action");
        }
        let o = match read_obs(p, obs, obs_len) {
            Ok(o) => o,
            Err(s) => return s,
        };
        match p.learner.act_deterministic(o) {
            Ok(a) => {
                *action = a[0];
                *action.add(1) = a[1];
                HacoStatus::Ok
            }
            Err(e) => fail(HacoStatus::Numeric, e.to_string()),
        }
    })
}

/// Proxy value of an (observation, action) pair.
///
/// # Safety
/// `policy` is a live handle; `obs` holds `obs_len` doubles; `action`
/// holds two; `out` one.
#[no_mangle]
pub unsafe extern "C" fn haco_policy_q(
    policy: *const HacoPolicy,
    obs: *const f64,
    obs_len: usize,
    action: *const f64,
    out: *mut f64,
) -> HacoStatus {
    guard(|| {
        let Some(p) = policy.as_ref() else {
            return fail(HacoStatus::NullPointer, "null policy");
        };
        if action.is_null() || out.is_null() {
            return fail(HacoStatus::NullPointer, "null argument");
        }
        let o = match read_obs(p, obs, obs_len) {
            Ok(o) => o,
            Err(s) => return s,
        };
        match p.learner.q_value(o, [*action, *action.add(1)]) {
            Ok(q) => {
                *out = q;
                HacoStatus::Ok
            }
            Err(e) => fail(HacoStatus::Numeric, e.to_string()),
        }
    })
}
