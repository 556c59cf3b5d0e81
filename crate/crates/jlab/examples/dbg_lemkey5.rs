use jlab::exactalg::{Character, FgAbelianTarget};
use jlab::genericize::*;
use jlab::ia_ab::ia_ab_module;
use jlab::regmod::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

fn random_char(rng: &mut ChaCha8Rng, m: &RegularModule, target: &FgAbelianTarget, density: f64) -> Character {
    loop {
        let mut values = BTreeMap::new();
        for l in m.module.zbasis() {
            if rng.gen_bool(density) {
                let free = (0..target.rank).map(|_| rng.gen_range(-3..=3)).collect();
                let tors = target.torsion.iter().map(|&d| rng.gen_range(0..d)).collect();
                let v = target.element(free, tors).unwrap();
                if !v.is_zero() { values.insert(l.clone(), v); }
            }
        }
        let lam = Character::new(m.module.clone(), target.clone(), values).unwrap();
        if !lam.is_zero() { return lam; }
    }
}

fn main() {
    let targets = [
        FgAbelianTarget::free(1),
        FgAbelianTarget::new(0, &[2]).unwrap(),
        FgAbelianTarget::new(0, &[6]).unwrap(),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for (n, r) in [(6u8, 3u8), (7, 3), (8, 3), (4, 2)] {
        let m = ia_ab_module(n).unwrap();
        for (ti, target) in targets.iter().enumerate() {
            for case in 0..8 {
                let lam = random_char(&mut rng, &m, target, 0.1);
                match lemkey5(&lam, r, &m) {
                    Ok(w) => {
                        let moved = apply_word_to_char(&w, &lam, &m).unwrap();
                        assert!(pairs_generic(&moved, r).unwrap());
                    }
                    Err(e) => {
                        println!("FAIL n={n} r={r} target#{ti} case={case}: {e}");
                        println!("  values: {:?}", lam.values().keys().collect::<Vec<_>>());
                        let supp = support(&lam, &m).unwrap();
                        println!("  supp: {:?}", supp.iter().map(|&s| set_to_vec(s)).collect::<Vec<_>>());
                        return;
                    }
                }
            }
        }
    }
    println!("all ok");
}
