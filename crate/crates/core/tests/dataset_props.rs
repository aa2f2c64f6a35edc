//! Container round-trip, index integrity and digest refusal.

use std::collections::BTreeMap;

use proptest::collection::{btree_map, vec};
use proptest::prelude::*;

use hivekit::dataset::{replay_container, write_trajectories, ContainerReader, DatasetError, Series, Source, Trajectory};
use hivekit::geom::Vec2;
use hivekit::rng::CounterRng;
use hivekit::sim::{ObjectState, SimState};
use hivekit::EnvRegistry;

fn value() -> impl Strategy<Value = f64> {
    prop_oneof![
        8 => -1e6..1e6f64,
        1 => Just(0.0),
        1 => Just(-0.0),
        1 => Just(f64::MIN_POSITIVE / 4.0),
        1 => Just(f64::MAX),
    ]
}

fn series(t: usize, dim: usize) -> impl Strategy<Value = Series> {
    vec(value(), t * dim).prop_map(move |data| Series { dim, data })
}

fn source() -> impl Strategy<Value = Source> {
    prop_oneof![Just(Source::ExpertPolicy), Just(Source::HumanTeleop), Just(Source::Scripted), Just(Source::Random)]
}

fn sim_state() -> impl Strategy<Value = SimState> {
    (0usize..4, 0usize..4).prop_flat_map(|(nj, nobj)| {
        let object = (value(), value(), value(), value(), value(), value(), any::<u8>()).prop_map(
            |(px, py, vx, vy, radius, mass, color_index)| ObjectState {
                position: Vec2::new(px, py),
                velocity: Vec2::new(vx, vy),
                radius,
                mass,
                color_index,
            },
        );
        (
            value(),
            vec(value(), nj),
            vec(value(), nj),
            vec(object, nobj),
            proptest::option::of(0..nobj.max(1)),
            any::<[u64; 4]>(),
        )
            .prop_map(|(time, joint_pos, joint_vel, objects, grasped, words)| SimState {
                time,
                joint_pos,
                joint_vel,
                grasped_object: grasped.filter(|_| !objects.is_empty()),
                objects,
                rng_state: CounterRng::from_words(words),
            })
    })
}

fn trajectory(env_id: &'static str) -> impl Strategy<Value = Trajectory> {
    (0usize..12, vec(1usize..5, 0..4), 1usize..5, 1usize..8).prop_flat_map(move |(t, obs_dims, act_dim, state_dim)| {
        let observations = obs_dims
            .into_iter()
            .enumerate()
            .map(|(i, d)| series(t, d).prop_map(move |s| (format!("sensor{i}"), s)))
            .collect::<Vec<_>>();
        (
            any::<u64>(),
            observations,
            series(t, act_dim),
            vec(value(), t),
            vec(any::<bool>(), t),
            series(t, state_dim),
            sim_state(),
            source(),
            btree_map("[a-z_]{1,8}", "[ -~]{0,12}", 0..4),
        )
            .prop_map(move |(seed, observations, actions, rewards, successes, states, initial_state, source, metadata)| {
                Trajectory {
                    env_id: env_id.to_owned(),
                    seed,
                    observations,
                    actions,
                    rewards,
                    successes,
                    states,
                    initial_state,
                    source,
                    metadata: metadata.into_iter().collect::<BTreeMap<_, _>>(),
                }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn read_write_round_trip(trajs in vec(trajectory("reach-v0"), 0..6)) {
        let cfg = EnvRegistry::builtin().config("reach-v0").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.rsl");
        write_trajectories(&path, &cfg, &trajs).unwrap();
        let reader = ContainerReader::open(&path).unwrap();
        prop_assert_eq!(reader.config(), &*cfg);
        prop_assert_eq!(reader.len(), trajs.len());
        let scanned = reader.read_all().unwrap();
        prop_assert_eq!(&scanned, &trajs);
        for k in (0..trajs.len()).rev() {
            prop_assert_eq!(&reader.read(k).unwrap(), &scanned[k]);
        }
        prop_assert!(reader.read(trajs.len()).is_err());
    }
}

#[test]
fn empty_container_is_valid() {
    let cfg = EnvRegistry::builtin().config("push-v0").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.rsl");
    let reader = write_trajectories(&path, &cfg, &[]).unwrap();
    assert!(reader.is_empty());
    assert!(reader.read_all().unwrap().is_empty());
}

#[test]
fn corrupted_magic_is_rejected() {
    let cfg = EnvRegistry::builtin().config("reach-v0").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.rsl");
    write_trajectories(&path, &cfg, &[]).unwrap();
    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, bytes).unwrap();
    let err = ContainerReader::open(&path).unwrap_err();
    assert!(matches!(err, DatasetError::NotRoboSet));
    assert_eq!(err.to_string(), "not a RoboSet-lite file");
}

#[test]
fn tampered_config_fails_digest() {
    let cfg = EnvRegistry::builtin().config("reach-v0").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.rsl");
    write_trajectories(&path, &cfg, &[]).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let needle = format!("horizon = {}", cfg.horizon);
    let at = bytes.windows(needle.len()).position(|w| w == needle.as_bytes()).expect("horizon line");
    let mut tampered = bytes.clone();
    let digit = at + needle.len() - 1;
    tampered[digit] = if tampered[digit] == b'9' { b'8' } else { b'9' };
    std::fs::write(&path, tampered).unwrap();
    assert!(matches!(ContainerReader::open(&path), Err(DatasetError::DigestMismatch)));
}

#[test]
fn replay_refuses_other_config() {
    let reg = EnvRegistry::builtin();
    let cfg = reg.config("reach-v0").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.rsl");
    let reader = write_trajectories(&path, &cfg, &[]).unwrap();
    let mut other = (*cfg).clone();
    other.horizon += 1;
    assert!(matches!(replay_container(&reader, Some(&other)), Err(DatasetError::DigestMismatch)));
    let push = reg.config("push-v0").unwrap();
    assert!(matches!(replay_container(&reader, Some(&push)), Err(DatasetError::DigestMismatch)));
    assert!(replay_container(&reader, Some(&cfg)).is_ok());
}

#[test]
fn mixed_env_write_is_refused() {
    let reg = EnvRegistry::builtin();
    let reach = reg.config("reach-v0").unwrap();
    let mut env = reg.make("push-v0").unwrap();
    let expert = hivekit::agents::scripted_expert(&reg.config("push-v0").unwrap()).unwrap();
    let t = hivekit::agents::collect_trajectories(&mut env, &expert, 0, 1, Source::ExpertPolicy).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let err = write_trajectories(&dir.path().join("m.rsl"), &reach, &t).unwrap_err();
    assert!(matches!(err, DatasetError::MixedEnv { .. }));
}
