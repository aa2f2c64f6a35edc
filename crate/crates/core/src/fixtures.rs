//! Shipped environment configs, embedded at build time.

/// `(file name, contents)` of every shipped fixture.
pub const BUILTIN: [(&str, &str); 8] = [
    ("reach-v0.cfg", include_str!("../fixtures/reach-v0.cfg")),
    ("push-v0.cfg", include_str!("../fixtures/push-v0.cfg")),
    ("pickplace-v0.cfg", include_str!("../fixtures/pickplace-v0.cfg")),
    ("pendulum-v0.cfg", include_str!("../fixtures/pendulum-v0.cfg")),
    ("reach_v2d-v0.cfg", include_str!("../fixtures/reach_v2d-v0.cfg")),
    ("push_v2d-v0.cfg", include_str!("../fixtures/push_v2d-v0.cfg")),
    ("pickplace_v2d-v0.cfg", include_str!("../fixtures/pickplace_v2d-v0.cfg")),
    ("pendulum_v2d-v0.cfg", include_str!("../fixtures/pendulum_v2d-v0.cfg")),
];

/// State-observation task ids, one per task family.
pub const STATE_ENV_IDS: [&str; 4] = ["reach-v0", "push-v0", "pickplace-v0", "pendulum-v0"];

pub fn get(file_name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == file_name).map(|(_, t)| *t)
}
