mod common;

use common::*;
use mmel_core::attrib::{AttributionMap, Provenance};
use mmel_core::eval::*;
use mmel_core::math::trapezoid_auc;
use mmel_core::model::{encode_image, encode_text, similarity, BOS, EOS, PAD};
use mmel_core::{Error, Tensor};
use proptest::prelude::*;

/// Score of every one of the 2^n kept-sets, indexed by bitmask, summed
/// directly from the per-unit contributions.
fn enumerate_scores(m: &PlantedModel) -> Vec<f64> {
    let c = m.contributions();
    let n = c.len();
    (0u32..1 << n)
        .map(|mask| {
            m.bias()
                + (0..n)
                    .filter(|i| mask >> i & 1 == 1)
                    .map(|i| c[i])
                    .sum::<f64>()
        })
        .collect()
}

fn bits(kept: &[bool]) -> usize {
    kept.iter()
        .enumerate()
        .filter(|(_, &k)| k)
        .map(|(i, _)| 1 << i)
        .sum()
}

#[test]
fn planted_metrics_match_enumeration() {
    for seed in 0..5 {
        let m = PlantedModel::grid(seed, 4, 4).unwrap();
        let table = enumerate_scores(&m);
        let map = m.attribution().unwrap();
        for mode in [CurveMode::Deletion, CurveMode::Insertion] {
            let curve = perturbation_curve(&m, map.data(), mode, 16).unwrap();
            let (fr, masks) = curve_masks(map.data(), mode, 16).unwrap();
            let expect: Vec<f64> = masks.iter().map(|k| table[bits(k)]).collect();
            for (a, b) in curve.scores.iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-9);
            }
            assert!((curve.auc - trapezoid_auc(&fr, &expect).unwrap()).abs() <= 1e-9);
        }
        for retain in [0.25, 0.5, 1.0] {
            let s = confidence_sample(&m, map.data(), retain).unwrap();
            let k = top_k_count(retain, 16).unwrap();
            let c = table[(1 << 16) - 1];
            let c_keep = table[bits(&top_k_mask(map.data(), k))];
            assert!((s.c - c).abs() <= 1e-9 && (s.c_keep - c_keep).abs() <= 1e-9);
            let drop = ((c - c_keep) / c).max(0.0) * 100.0;
            assert!((s.drop.unwrap() - drop).abs() <= 1e-9);
            assert_eq!(s.increase, c_keep > c);
        }
    }
}

#[test]
fn planted_map_is_the_best_deletion_order_among_prefixes() {
    // Among all k-subsets, the map's top-k removes the most mass whenever the
    // top-k are all positive contributors.
    let m = PlantedModel::grid(11, 4, 4).unwrap();
    let table = enumerate_scores(&m);
    let map = m.attribution().unwrap();
    let positives = map.data().iter().filter(|&&v| v > 0.0).count();
    let full = (1usize << 16) - 1;
    for k in 0..=positives {
        let removed = bits(&top_k_mask(map.data(), k));
        let best = (0..=full)
            .filter(|s: &usize| s.count_ones() as usize == k)
            .map(|s| table[full ^ s])
            .fold(f64::INFINITY, f64::min);
        assert!((table[full ^ removed] - best).abs() <= 1e-12);
    }
}

#[test]
fn planted_orderings() {
    let mut beat_random = 0;
    for seed in 0..100 {
        let m = PlantedModel::grid(seed, 4, 4).unwrap();
        let map = m.attribution().unwrap();
        let inv = inverse_map(&map).unwrap();
        let rnd = random_attribution(seed + 1000, 4).unwrap();
        let del = |s: &[f64]| {
            perturbation_curve(&m, s, CurveMode::Deletion, 16)
                .unwrap()
                .auc
        };
        let ins = |s: &[f64]| {
            perturbation_curve(&m, s, CurveMode::Insertion, 16)
                .unwrap()
                .auc
        };
        assert!(del(map.data()) < del(inv.data()), "seed {seed}");
        assert!(ins(map.data()) > ins(inv.data()), "seed {seed}");
        if del(map.data()) < del(rnd.data()) {
            beat_random += 1;
        }
    }
    assert!(beat_random >= 95, "{beat_random}");
}

#[test]
fn planted_occlusion_is_non_increasing() {
    for seed in 0..20 {
        let m = PlantedModel::grid(seed, 8, 8).unwrap();
        let map = m.attribution().unwrap();
        let sets = occlusion_sets(map.data(), &DEFAULT_LEVELS).unwrap();
        let scores: Vec<f64> = sets
            .iter()
            .map(|occ| {
                m.score(&occ.iter().map(|o| !o).collect::<Vec<_>>())
                    .unwrap()
            })
            .collect();
        assert!(scores.windows(2).all(|p| p[1] <= p[0]), "{scores:?}");
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

#[test]
fn planted_text_ordering_is_optimal() {
    for seed in 0..10 {
        let m = PlantedModel::tokens(seed, 6, 2).unwrap();
        let map = m.attribution().unwrap();
        let mine = perturbation_curve(&m, map.data(), CurveMode::Deletion, 6)
            .unwrap()
            .auc;
        let best = permutations(6)
            .into_iter()
            .map(|order| {
                // Scores that rank units in `order`.
                let mut s = vec![0.0; 6];
                for (rank, &u) in order.iter().enumerate() {
                    s[u] = (6 - rank) as f64;
                }
                perturbation_curve(&m, &s, CurveMode::Deletion, 6)
                    .unwrap()
                    .auc
            })
            .fold(f64::INFINITY, f64::min);
        assert!(mine <= best + 1e-12);
    }
}

#[test]
fn random_map_is_worse_on_average() {
    let mut total = (0.0, 0.0);
    for seed in 0..100 {
        let m = PlantedModel::grid(seed, 4, 4).unwrap();
        let map = m.attribution().unwrap();
        let rnd = random_attribution(seed, 4).unwrap();
        total.0 += perturbation_curve(&m, map.data(), CurveMode::Deletion, 16)
            .unwrap()
            .auc;
        total.1 += perturbation_curve(&m, rnd.data(), CurveMode::Deletion, 16)
            .unwrap()
            .auc;
    }
    assert!(total.1 > total.0);
}

fn encoder_setup(
    seed: u64,
) -> (
    mmel_core::Weights,
    Tensor,
    mmel_core::Tokens,
    AttributionMap,
) {
    let c = mmel_core::ModelConfig::default();
    let w = mmel_core::model::generate_weights(&c, seed).unwrap();
    let img = random_image(&c, seed + 1);
    let toks = text(&c, "a dog on grass");
    let map = mmel_core::enhancer::baseline_pipeline(&w, &img, &toks, mmel_core::Objective::Cosine)
        .unwrap()
        .base;
    (w, img, toks, map)
}

#[test]
fn curve_endpoints_are_exact_forward_passes() {
    let (w, img, toks, map) = encoder_setup(3);
    let (e_txt, _) = encode_text(&w, &toks).unwrap();
    let (e_img, _) = encode_image(&w, &img).unwrap();
    let c = similarity(&e_img, &e_txt).unwrap();
    let filled = Tensor::zeros(img.shape().to_vec());
    let (e_fill, _) = encode_image(&w, &filled).unwrap();
    let c_fill = similarity(&e_fill, &e_txt).unwrap();

    let del = deletion_curve(&w, &img, &toks, &map, 16).unwrap();
    assert_eq!(del.scores[0].to_bits(), c.to_bits());
    assert_eq!(del.scores[16].to_bits(), c_fill.to_bits());
    let ins = insertion_curve(&w, &img, &toks, &map, 16).unwrap();
    assert_eq!(ins.scores[0].to_bits(), c_fill.to_bits());
    assert_eq!(ins.scores[16].to_bits(), c.to_bits());
    assert_eq!(del.fractions.first(), Some(&0.0));
    assert_eq!(del.fractions.last(), Some(&1.0));

    let one = deletion_curve(&w, &img, &toks, &map, 1).unwrap();
    assert_eq!(one.auc, (one.scores[0] + one.scores[1]) / 2.0);
}

#[test]
fn insertion_sets_are_nested() {
    let scores: Vec<f64> = (0..16).map(|i| ((i * 7) % 16) as f64 / 3.0).collect();
    let (_, masks) = curve_masks(&scores, CurveMode::Insertion, 16).unwrap();
    for p in masks.windows(2) {
        assert!(p[0].iter().zip(&p[1]).all(|(a, b)| !a || *b));
    }
    let (_, del) = curve_masks(&scores, CurveMode::Deletion, 16).unwrap();
    for p in del.windows(2) {
        assert!(p[1].iter().zip(&p[0]).all(|(a, b)| !a || *b));
    }
}

#[test]
fn confidence_on_the_encoder() {
    let (w, img, toks, map) = encoder_setup(4);
    let scorer = ImageScorer::new(&w, &img, &toks, 0.0).unwrap();
    let full = confidence_sample(&scorer, map.data(), 1.0).unwrap();
    assert_eq!(full.c_keep, full.c);
    assert!(!full.increase);
    if full.c > 0.0 {
        assert_eq!(full.drop, Some(0.0));
    }
    // A constant map keeps the first half of the patches in index order.
    let constant = vec![0.5; 16];
    let a = confidence_sample(&scorer, &constant, 0.5).unwrap();
    let b = confidence_sample(&scorer, &constant, 0.5).unwrap();
    assert_eq!(a, b);
    let kept: Vec<bool> = (0..16).map(|i| i < 8).collect();
    assert_eq!(a.c_keep, scorer.score(&kept).unwrap());
    assert!(confidence_sample(&scorer, &constant, 0.0).is_err());
}

#[test]
fn text_curves_leave_specials_alone() {
    let (w, img, toks, _) = encoder_setup(5);
    let scorer = TextScorer::new(&w, &img, &toks).unwrap();
    assert_eq!(scorer.units(), 4);
    let (_, masks) = curve_masks(&[0.4, 0.1, 0.3, 0.2], CurveMode::Deletion, 4).unwrap();
    for kept in &masks {
        let t = scorer.masked_tokens(kept).unwrap();
        assert_eq!(t.ids[0], BOS);
        assert_eq!(t.ids[toks.eos_index], EOS);
        assert_eq!(t.eos_index, toks.eos_index);
        for (u, &p) in scorer.positions().iter().enumerate() {
            assert_eq!(t.ids[p], if kept[u] { toks.ids[p] } else { PAD });
        }
    }
    let (_, acts_v) = encode_image(&w, &img).unwrap();
    let (_, acts_t) = encode_text(&w, &toks).unwrap();
    let g =
        mmel_core::attrib::backprop_to_attention(&w, &acts_v, &acts_t, mmel_core::Modality::Text)
            .unwrap();
    let tmap = mmel_core::attrib::grad_eclip_text(&acts_t, &g).unwrap();
    let del = text_perturbation_curve(&w, &img, &toks, &tmap, CurveMode::Deletion, None).unwrap();
    assert_eq!(del.scores.len(), 5);
    assert_eq!(
        del.scores[0].to_bits(),
        scorer.unperturbed().unwrap().to_bits()
    );
    let ins = text_perturbation_curve(&w, &img, &toks, &tmap, CurveMode::Insertion, None).unwrap();
    assert_eq!(ins.scores[4].to_bits(), del.scores[0].to_bits());
    assert_eq!(ins.scores[0].to_bits(), del.scores[4].to_bits());

    let empty = text(w.config(), "");
    assert!(matches!(
        TextScorer::new(&w, &img, &empty),
        Err(Error::Evaluation(_))
    ));
}

#[test]
fn occlusion_series_on_the_encoder() {
    let (w, img, toks, map) = encoder_setup(6);
    let scorer = ImageScorer::new(&w, &img, &toks, 0.0).unwrap();
    let steps = occlusion_series(&scorer, &map, &DEFAULT_LEVELS).unwrap();
    assert_eq!(steps.len(), 5);
    let counts: Vec<usize> = steps
        .iter()
        .map(|s| s.occluded.iter().filter(|&&o| o).count())
        .collect();
    assert_eq!(counts, vec![1, 2, 2, 3, 4]);
    for s in &steps {
        let expect = mask_image(&img, &map, s.level, MaskMode::RemoveTop, 0.0).unwrap();
        assert_eq!(s.image, expect);
    }
}

#[test]
fn report_aggregates_match_rows() {
    let rows: Vec<SampleRow> = (0..8)
        .map(|seed| {
            let m = PlantedModel::grid(seed, 4, 4).unwrap();
            let map = m.attribution().unwrap();
            evaluate_sample(format!("s{seed}"), &m, map.data(), 0.5, 16).unwrap()
        })
        .collect();
    let mut rev = rows.clone();
    rev.reverse();
    let a = EvalReport::new(
        mmel_core::Method::GradEclip,
        rows.clone(),
        serde_json::Value::Null,
        "h".into(),
        None,
    )
    .unwrap();
    let b = EvalReport::new(
        mmel_core::Method::GradEclip,
        rev,
        serde_json::Value::Null,
        "h".into(),
        None,
    )
    .unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
    let mean_del = rows.iter().map(|r| r.del_auc).sum::<f64>() / 8.0;
    assert!((a.aggregates.mean_del_auc - mean_del).abs() < 1e-12);
    let incr = rows.iter().filter(|r| r.increase).count() as f64 / 8.0 * 100.0;
    assert!((a.aggregates.increase_pct - incr).abs() < 1e-12);
    assert!((0.0..=100.0).contains(&a.aggregates.increase_pct));
}

#[test]
fn sanity_depth_zero_is_exact() {
    let c = tiny_config();
    let w = scaled_weights(&c, 1, 10.0);
    let img = random_image(&c, 2);
    let toks = text(&c, "a cat");
    let req = mmel_core::AttributionRequest {
        weights: &w,
        enhancer: None,
        objective: mmel_core::Objective::Cosine,
        seed: 0,
    };
    let r = sanity_randomization(
        &req,
        mmel_core::Method::GradEclip,
        &img,
        &toks,
        &[1, 2, 3],
        None,
    )
    .unwrap();
    assert_eq!(r.depths.len(), 5);
    for d in &r.depths[..1] {
        assert!(d.rho.iter().all(|&v| v == Some(1.0)));
    }
    let csv = r.to_csv().unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(
        sanity_randomization(&req, mmel_core::Method::GradEclip, &img, &toks, &[], None).is_err()
    );
    assert!(sanity_randomization(
        &req,
        mmel_core::Method::GradEclip,
        &img,
        &toks,
        &[1],
        Some(&[2, 1])
    )
    .is_err());
}

#[test]
fn random_maps_carry_random_provenance() {
    assert_eq!(
        random_attribution(1, 4).unwrap().provenance(),
        Provenance::Random
    );
}

proptest! {
    #[test]
    fn mask_selection_is_pure(scores in prop::collection::vec(0.0f64..1.0, 16), f in 0.0f64..=1.0) {
        let k = top_k_count(f, 16).unwrap();
        let a = top_k_mask(&scores, k);
        prop_assert_eq!(a.iter().filter(|&&s| s).count(), k);
        prop_assert_eq!(a, top_k_mask(&scores.clone(), k));
    }

    #[test]
    fn two_point_curve_auc(seed in 0u64..1000) {
        let m = PlantedModel::grid(seed, 4, 4).unwrap();
        let map = m.attribution().unwrap();
        let c = perturbation_curve(&m, map.data(), CurveMode::Deletion, 1).unwrap();
        prop_assert_eq!(c.auc, (c.scores[0] + c.scores[1]) / 2.0);
    }
}
