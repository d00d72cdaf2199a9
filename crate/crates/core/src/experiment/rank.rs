use serde::Serialize;

use crate::error::{Error, Result};
use crate::tt::{compression_ratio, param_count_for, RankSpec, TensorizationMap};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankChoice {
    pub rank: usize,
    pub ranks: RankSpec,
    pub tt_params: usize,
    pub dense_params: usize,
    pub ratio: f64,
}

fn choice(map: &TensorizationMap, rank: usize) -> Result<RankChoice> {
    let modes = map.mode_sizes();
    let ranks = RankSpec::uniform(modes.len(), rank)?.clamp_to(&modes)?;
    let tt_params = param_count_for(&modes, &ranks);
    let dense_params = map.dense_params();
    Ok(RankChoice {
        rank,
        ratio: compression_ratio(dense_params, tt_params),
        ranks,
        tt_params,
        dense_params,
    })
}

/// Largest uniform rank whose realized (clamped) ranks compress the layer by
/// at least `target_ratio`. Targets at or below 1 get the full ranks.
pub fn rank_search_layer(map: &TensorizationMap, target_ratio: f64) -> Result<RankChoice> {
    map.validate()?;
    if target_ratio.is_nan() || target_ratio <= 0.0 {
        return Err(Error::Config(format!(
            "target ratio must be positive, got {target_ratio}"
        )));
    }
    let modes = map.mode_sizes();
    let full = RankSpec::full(&modes)?;
    let max_rank = full.as_slice().iter().copied().max().unwrap_or(1);
    if target_ratio <= 1.0 {
        return choice(map, max_rank);
    }
    // the ratio only falls as the rank grows, so stop at the first miss
    let mut best = None;
    for r in 1..=max_rank {
        let c = choice(map, r)?;
        if c.ratio >= target_ratio {
            best = Some(c);
        } else {
            break;
        }
    }
    match best {
        Some(c) => Ok(c),
        None => Err(Error::RankTargetUnreachable {
            target: target_ratio,
            best: choice(map, 1)?.ratio,
        }),
    }
}

/// One choice per map, each searched independently.
pub fn rank_search(maps: &[TensorizationMap], target_ratio: f64) -> Result<Vec<RankChoice>> {
    maps.iter().map(|m| rank_search_layer(m, target_ratio)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn big_layer() -> TensorizationMap {
        TensorizationMap::fc(vec![4, 8, 8, 4], vec![2, 5, 5, 2]).unwrap()
    }

    /// Exhaustive enumeration with params counted core by core.
    fn enumerate(map: &TensorizationMap, target: f64) -> Option<usize> {
        let modes = map.mode_sizes();
        let dense = map.dense_params() as f64;
        let mut best = None;
        for r in 1..=modes.iter().product::<usize>() {
            let mut ranks = vec![1usize; modes.len() + 1];
            for k in 1..modes.len() {
                let left: usize = modes[..k].iter().product();
                let right: usize = modes[k..].iter().product();
                ranks[k] = r.min(left).min(right).min(ranks[k - 1] * modes[k - 1]);
            }
            let params: usize = (0..modes.len()).map(|k| ranks[k] * modes[k] * ranks[k + 1]).sum();
            if dense / params as f64 >= target {
                best = Some(r);
            }
            if r > 64 {
                break;
            }
        }
        best
    }

    #[test]
    fn fifty_times_gives_rank_four() {
        let c = rank_search_layer(&big_layer(), 50.0).unwrap();
        assert_eq!(c.rank, 4);
        assert_eq!(c.tt_params, 1344);
        assert!((c.ratio - 76.190_476).abs() < 1e-5);
        assert_eq!(enumerate(&big_layer(), 50.0), Some(4));
        // rank 5 falls short
        assert!(choice(&big_layer(), 5).unwrap().ratio < 50.0);
    }

    #[test]
    fn unit_target_gives_full_ranks() {
        let map = TensorizationMap::fc(vec![2, 3], vec![2, 2]).unwrap();
        let c = rank_search_layer(&map, 1.0).unwrap();
        assert_eq!(c.ranks, RankSpec::full(&map.mode_sizes()).unwrap());
    }

    #[test]
    fn impossible_target() {
        assert!(matches!(
            rank_search_layer(&big_layer(), 1e9),
            Err(Error::RankTargetUnreachable { .. })
        ));
        assert!(rank_search_layer(&big_layer(), -2.0).is_err());
    }

    #[test]
    fn mnist_layer_at_eight_times() {
        let map = TensorizationMap::fc(vec![4, 4, 4, 4], vec![4, 7, 4, 7]).unwrap();
        let c = rank_search_layer(&map, 8.0).unwrap();
        assert!(c.ratio >= 8.0);
        assert!(choice(&map, c.rank + 1).unwrap().ratio < 8.0);
    }

    proptest! {
        #[test]
        fn matches_enumeration(
            m in proptest::collection::vec(1usize..5, 2..4),
            n_seed in proptest::collection::vec(1usize..5, 4),
            target in 1.01f64..30.0,
        ) {
            let n: Vec<usize> = n_seed[..m.len()].to_vec();
            let map = TensorizationMap::fc(m, n).unwrap();
            let got = rank_search_layer(&map, target);
            match enumerate(&map, target) {
                Some(r) => {
                    let c = got.unwrap();
                    prop_assert_eq!(c.rank.min(64), r.min(64));
                    prop_assert!(c.ratio >= target);
                    let clamped = c.ranks.clamp_to(&map.mode_sizes()).unwrap();
                    prop_assert_eq!(&clamped, &c.ranks);
                }
                None => prop_assert!(matches!(got, Err(Error::RankTargetUnreachable { .. })), "expected unreachable"),
            }
        }
    }
}
