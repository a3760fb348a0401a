//! Fast invariant checks behind `mvmc selftest`.

use crate::error::Result;
use crate::measure::Functional;
use crate::mlmc::{self, EstimatorKind, LevelSchedule};
use crate::models;
use crate::paths::{self, philox4x64_10, CloudKey};
use crate::simulate;

pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, body: impl FnOnce() -> Result<(bool, String)>) -> Check {
    match body() {
        Ok((passed, detail)) => Check { name, passed, detail },
        Err(e) => Check {
            name,
            passed: false,
            detail: e.to_string(),
        },
    }
}

pub fn selftest() -> Vec<Check> {
    vec![
        check("philox known answer", || {
            let got = philox4x64_10([1, 0, 0, 0], [0, 0]);
            let want = [0x02f4ba6408e4d89b, 0x3dd62b0b9ca8c5b2, 0x1c8667a55d902e79, 0x907d7a052fd5b4dc];
            Ok((got == want, format!("{:016x}", got[0])))
        }),
        check("schedule at epsilon 0.1", || {
            let s = LevelSchedule::from_epsilon(0.1, 1.0)?;
            let counts = s.counts();
            Ok((s.top() == 4 && counts == [2732, 483, 86, 16, 3], format!("L={} M={counts:?}", s.top())))
        }),
        check("antithetic level cost", || {
            let s = LevelSchedule::manual(1.0, 1, 1, vec![1, 1, 1, 1])?;
            let level = &s.levels()[3];
            let c = mlmc::level_charge(EstimatorKind::AmlmcEuler, level);
            Ok((c == 640, format!("N=8 charge {c}")))
        }),
        check("linear functional zero corrections", || {
            let model = models::mean_field_ou(1.0, 1.0, 0.0, 1.0)?;
            let phi = Functional::by_name("mean", 1)?;
            let s = LevelSchedule::manual(1.0, 1, 1, vec![64, 32, 16, 8, 4])?;
            let r = mlmc::run_amlmc_iid(model.initial_law(), &phi, &s, 7)?;
            let zero = r.per_level[1..].iter().all(|l| l.mean == 0.0 && l.variance == Some(0.0));
            Ok((zero, format!("{} corrected levels", r.per_level.len() - 1)))
        }),
        check("coupling identity", || {
            let model = models::mean_field_ou(1.0, 1.0, 0.5, 1.0)?;
            let key = CloudKey::new(3, 2, 5);
            let (n, p) = (8, 16);
            let triple = simulate::antithetic_triple_euler(&model, n, p, 1.0, &key)?;
            let init = paths::draw_initials(&model, 2 * n, &key)?;
            let mut same = true;
            for (range, half) in [(0..n, &triple.half1), (n..2 * n, &triple.half2)] {
                let table = paths::draw_increments_range(range.clone(), p, 1.0 / p as f64, 1, &key)?.coarsen()?;
                let direct = simulate::euler_from(&model, &init.subset(range)?, &table, &key)?;
                same &= direct.states.as_flat() == half.states.as_flat();
            }
            Ok((same, "halves equal direct coarse runs".into()))
        }),
        check("thread-count independence", || {
            let model = models::mean_field_ou(1.0, 1.0, 0.0, 0.5)?;
            let phi = Functional::by_name("second-moment", 1)?;
            let s = LevelSchedule::manual(1.0, 2, 2, vec![40, 20, 10])?;
            let mut prints = Vec::new();
            for threads in [1, 3] {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .expect("thread pool");
                let r = pool.install(|| mlmc::run_amlmc_particles_euler(&model, &phi, &s, 11))?;
                prints.push(r.fingerprint());
            }
            Ok((prints[0] == prints[1], prints[0][..16].to_string()))
        }),
    ]
}
