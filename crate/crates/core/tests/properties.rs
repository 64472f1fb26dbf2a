mod common;

use std::collections::BTreeSet;
use std::sync::OnceLock;

use proptest::prelude::*;

use cos_cvae::corpus::split::{fill_sequence, Context};
use cos_cvae::corpus::toyworld::toy_objects;
use cos_cvae::corpus::vocab::{Vocabulary, EOS};
use cos_cvae::corpus::{
    generate_toy_world, merge_split, normalize, tokenize, Dataset, ObjectVocabulary, Splitter, ToyConfig,
};
use cos_cvae::decode::{constrained_decode, sample_caption, ConstraintSet, SampleOptions, TableScorer};
use cos_cvae::evalkit::{div_n, m_bleu4, Words};
use cos_cvae::model::{CosModel, Gaussian, ModelDims};
use cos_cvae::objective::kl_diag_gauss;
use cos_cvae::pipeline::{model_config, paired_examples};
use cos_cvae::pseudosup::{allowed_objects, fill_objects, PseudoMode};
use cos_cvae::retrieval::{IndexEntry, NeighborIndex};

const CONTEXT_WORDS: [&str; 10] = ["a", "the", "on", "near", "with", "and", "two", "street", "grass", "big"];

struct Toy {
    ds: Dataset,
    model: CosModel,
}

fn toy() -> &'static Toy {
    static T: OnceLock<Toy> = OnceLock::new();
    T.get_or_init(|| {
        let ds = generate_toy_world(11, 60, &ToyConfig::default()).unwrap().dataset(20).unwrap();
        let model = CosModel::new(model_config(&ds, ModelDims::toy(), 11)).unwrap();
        Toy { ds, model }
    })
}

fn caption_text() -> impl Strategy<Value = String> {
    let ov = toy_objects();
    let surfaces: Vec<String> = ov.all_surfaces().map(String::from).collect();
    let word = prop_oneof![
        3 => prop::sample::select(CONTEXT_WORDS.to_vec()).prop_map(String::from),
        1 => prop::sample::select(surfaces),
    ];
    prop::collection::vec(word, 1..14).prop_map(|w| w.join(" "))
}

fn caption_vocab(ov: &ObjectVocabulary) -> Vocabulary {
    Vocabulary::build(
        CONTEXT_WORDS
            .iter()
            .map(|s| s.to_string())
            .chain(ov.all_surfaces().map(String::from)),
    )
}

fn gaussian(dim: usize) -> impl Strategy<Value = Gaussian> {
    (prop::collection::vec(-4.0..4.0f64, dim), prop::collection::vec(-3.0..3.0f64, dim)).prop_map(|(mu, ls)| Gaussian {
        mu,
        sigma: ls.into_iter().map(f64::exp).collect(),
    })
}

fn unit(v: Vec<f64>) -> Vec<f32> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-9);
    v.iter().map(|x| (x / n) as f32).collect()
}

fn entries() -> impl Strategy<Value = Vec<IndexEntry>> {
    prop::collection::vec((0u8..6, prop::collection::vec(5u32..9, 1..4), prop::collection::vec(-1.0..1.0f64, 3)), 1..20)
        .prop_map(|xs| {
            xs.into_iter()
                .map(|(img, toks, v)| IndexEntry {
                    context: Context { tokens: toks, plural: vec![] },
                    image_id: format!("img{img}"),
                    vector: unit(v),
                })
                .collect()
        })
}

fn sample_sets() -> impl Strategy<Value = Vec<Words>> {
    let word = prop::sample::select(vec!["a", "b", "c", "d"]).prop_map(String::from);
    prop::collection::vec(prop::collection::vec(word, 1..6), 2..6)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // ---- corpus ----

    #[test]
    fn split_then_merge_restores_caption(text in caption_text()) {
        let ov = toy_objects();
        let vocab = caption_vocab(&ov);
        let c = tokenize(&text, &vocab).unwrap();
        let s = Splitter::new(&ov, &vocab).split(&c);
        let names: Vec<&str> = s.objects.iter().map(|o| o.name.as_str()).collect();
        prop_assert_eq!(merge_split(&s, &names, &vocab, &ov).unwrap(), c);
    }

    #[test]
    fn split_partitions_and_is_idempotent(text in caption_text()) {
        let ov = toy_objects();
        let vocab = caption_vocab(&ov);
        let sp = Splitter::new(&ov, &vocab);
        let s = sp.split(&tokenize(&text, &vocab).unwrap());
        prop_assert_eq!(s.context.len(), s.t_prime.len() + s.t_dprime.len());
        let slots: BTreeSet<usize> = s.t_dprime.iter().copied().collect();
        prop_assert_eq!(slots.len(), s.objects.len());
        for &t in &s.t_prime {
            prop_assert!(!slots.contains(&t));
        }
        // splitting the context again finds no objects
        let again = sp.split_tokens(&s.context);
        prop_assert!(again.objects.is_empty());
        prop_assert_eq!(again.context, s.context);
    }

    #[test]
    fn toy_world_is_seed_deterministic(seed in 0u64..1000) {
        let cfg = ToyConfig { held_out: ["zebra".to_string()].into(), ..ToyConfig::default() };
        let a = generate_toy_world(seed, 30, &cfg).unwrap();
        let b = generate_toy_world(seed, 30, &cfg).unwrap();
        prop_assert_eq!(&a, &b);
        let zebra: Vec<String> = ["zebra", "zebras"].iter().map(|s| s.to_string()).collect();
        for r in &a.train.captions {
            for c in &r.captions {
                prop_assert!(!normalize(c).iter().any(|w| zebra.contains(w)), "{}", c);
            }
        }
    }

    // ---- retrieval ----

    #[test]
    fn neighbors_sorted_distinct_and_order_free(es in entries(), q in prop::collection::vec(-1.0..1.0f64, 3), k in 1usize..6) {
        let q: Vec<f64> = unit(q).into_iter().map(f64::from).collect();
        let a = NeighborIndex::from_entries(3, "fp".into(), es.clone()).unwrap();
        let mut rev = es.clone();
        rev.reverse();
        let b = NeighborIndex::from_entries(3, "fp".into(), rev).unwrap();
        let ra = a.query(&q, k, None).unwrap();
        prop_assert_eq!(&ra, &b.query(&q, k, None).unwrap());
        prop_assert!(ra.neighbors.len() <= k);
        for w in ra.neighbors.windows(2) {
            prop_assert!(w[0].similarity >= w[1].similarity);
            prop_assert!(w[0].context != w[1].context);
        }
        for n in &ra.neighbors {
            prop_assert!(n.similarity <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn entry_vector_retrieves_itself(es in entries(), pick in any::<prop::sample::Index>()) {
        let idx = NeighborIndex::from_entries(3, "fp".into(), es.clone()).unwrap();
        let e = &es[pick.index(es.len())];
        let q: Vec<f64> = e.vector.iter().map(|&x| x as f64).collect();
        let top = &idx.query(&q, 1, None).unwrap().neighbors[0];
        let own: f64 = e.vector.iter().map(|&x| x as f64 * x as f64).sum();
        prop_assert!(top.similarity >= own - 1e-9);
        let excl = idx.query(&q, es.len(), Some(&e.image_id));
        if let Ok(r) = excl {
            prop_assert!(r.neighbors.iter().all(|n| n.image_id != e.image_id));
        }
    }

    // ---- objective ----

    #[test]
    fn kl_nonnegative_and_zero_on_self(q in gaussian(5), p in gaussian(5)) {
        prop_assert!(kl_diag_gauss(&q, &p).unwrap() >= -1e-12);
        prop_assert!(kl_diag_gauss(&q, &q).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn constrained_output_contains_constraints(
        rows in prop::collection::vec(prop::collection::vec(-3.0..0.0f64, 6), 10),
        phrase in prop::collection::vec(5u32..10, 1..3),
    ) {
        let mut table = vec![vec![f64::NEG_INFINITY; 10]; 10];
        for (r, row) in rows.iter().enumerate() {
            for (k, &x) in row[..5].iter().enumerate() {
                table[r][5 + k] = x;
            }
            table[r][EOS as usize] = row[5];
        }
        let c = ConstraintSet { phrases: vec![phrase] };
        let a = constrained_decode(&mut TableScorer { table: table.clone(), start: 1 }, 1, &c, 8, 5);
        let b = constrained_decode(&mut TableScorer { table, start: 1 }, 1, &c, 8, 5);
        prop_assert_eq!(format!("{a:?}"), format!("{b:?}"));
        if let Ok((toks, lp)) = a {
            prop_assert!(c.satisfied_by(&toks));
            prop_assert!(toks.len() <= 5 && lp <= 0.0);
        }
    }

    // ---- evalkit ----

    #[test]
    fn diversity_metrics_ignore_order_and_stay_in_range(s in sample_sets(), seed in any::<u64>()) {
        let mut shuffled = s.clone();
        let n = shuffled.len();
        for i in (1..n).rev() {
            shuffled.swap(i, (seed as usize).wrapping_add(i * 7919) % (i + 1));
        }
        for k in 1..=2 {
            let d = div_n(&s, k);
            prop_assert_eq!(d, div_n(&shuffled, k));
            prop_assert!((0.0..=1.0).contains(&d));
        }
        let m = m_bleu4(&s).unwrap();
        prop_assert!((m - m_bleu4(&shuffled).unwrap()).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&m));
        // a duplicate adds words but no new n-grams
        let mut dup = s.clone();
        dup.push(s[0].clone());
        prop_assert!(div_n(&dup, 1) <= div_n(&s, 1));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // ---- model ----

    #[test]
    fn model_distributions_are_well_formed(pick in any::<prop::sample::Index>(), noise in prop::collection::vec(-2.0..2.0f64, 48)) {
        let t = toy();
        let (m, ds) = (&t.model, &t.ds);
        let pairs = &ds.train.pairs;
        let p = &pairs[pick.index(pairs.len())];
        let seq = ds.splitter().split(&p.captions[0]);
        let steps = seq.context.len() + 1;
        let zd = m.z_dim();
        let eps: Vec<Vec<f64>> = (0..steps).map(|t| (0..zd).map(|j| noise[(t * zd + j) % noise.len()]).collect()).collect();
        let mut ctx = seq.context.clone();
        ctx.push(EOS);
        let (q, zs) = m.posterior_context(&ctx, p.image.pooled(), &eps).unwrap();
        prop_assert_eq!(zs.len(), steps);
        for s in &q.sigma {
            prop_assert!(s.iter().all(|&x| x > 0.0 && x.is_finite()));
        }
        let z: Vec<f64> = zs[0].iter().chain(&zs[0]).copied().collect();
        let (probs, att, _) = m.decode_step(&m.decoder_zero_state(), 1, &z, &p.image).unwrap();
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(probs.iter().all(|&x| x >= 0.0));
        prop_assert_eq!(att.len(), p.image.num_regions());
        prop_assert!((att.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampling_is_deterministic_and_clean(pick in any::<prop::sample::Index>(), seed in any::<u64>()) {
        let t = toy();
        let imgs: Vec<_> = t.ds.test.images().collect();
        let img = imgs[pick.index(imgs.len())];
        let opts = SampleOptions::default();
        let a = sample_caption(&t.model, &t.ds.vocab, img, seed, &opts).unwrap();
        let b = sample_caption(&t.model, &t.ds.vocab, img, seed, &opts).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.len() <= opts.max_len);
        prop_assert!(a.words().iter().all(|&w| !Vocabulary::is_special(w)));
    }

    // ---- pseudosup ----

    #[test]
    fn fills_keep_context_and_stay_allowed(pick in any::<prop::sample::Index>(), seed in any::<u64>(), novel in any::<bool>()) {
        let t = toy();
        let ds = &t.ds;
        let sp = ds.splitter();
        let pairs: Vec<_> = ds.train.pairs.iter().collect();
        let p = pairs[pick.index(pairs.len())];
        let ctx = sp.split(&p.captions[0]).to_context();
        let target = pairs[(pick.index(pairs.len()) + 1) % pairs.len()];
        let mode = if novel { PseudoMode::Novel } else { PseudoMode::Standard };
        let a = fill_objects(&ctx, &target.image, &t.model, &ds.vocab, &ds.objects, mode, 3, seed).unwrap();
        let b = fill_objects(&ctx, &target.image, &t.model, &ds.vocab, &ds.objects, mode, 3, seed).unwrap();
        prop_assert_eq!(&a, &b);
        let (fills, seq) = a;
        prop_assert_eq!(fills.len(), ctx.placeholder_positions().len());
        let allowed = allowed_objects(&target.image, &ds.objects, mode, 3);
        prop_assert!(fills.iter().all(|f| allowed.contains(&f.as_str())));
        let names: Vec<&str> = fills.iter().map(String::as_str).collect();
        prop_assert_eq!(&seq, &fill_sequence(&ctx, &names, &ds.vocab, &ds.objects).unwrap());
        let slots: BTreeSet<usize> = ctx.placeholder_positions().into_iter().collect();
        for (i, (&x, &c)) in seq.iter().zip(&ctx.tokens).enumerate() {
            if !slots.contains(&i) {
                prop_assert_eq!(x, c);
            }
        }
    }
}

#[test]
fn paired_stream_never_carries_held_out_tokens() {
    let cfg = ToyConfig {
        held_out: ["zebra".to_string()].into(),
        ..ToyConfig::default()
    };
    let ds = generate_toy_world(12, 200, &cfg).unwrap().dataset(20).unwrap();
    let banned: Vec<_> = ["zebra", "zebras"].iter().filter_map(|w| ds.vocab.id(w)).collect();
    let (_, paired) = paired_examples(&ds).unwrap();
    assert!(!paired.is_empty());
    for ex in &paired {
        assert!(!ex.seq.tokens.iter().any(|t| banned.contains(t)));
    }
}
