use std::sync::Arc;

use distill_lab::data::{
    generate_prompts, BatchOrigin, BatchSampler, DataSourceSpec, Example, Generator, LabeledDataset, PromptConfig,
    PromptDataset, SourceKind, Split,
};
use distill_lab::divergences::{estimate, exact_divergence, DivergenceKind};
use distill_lab::lm::{AutoRegressiveLM, InitScales, ModelShape, PromptHasher, Sequence, TokenDistribution, Vocabulary};
use distill_lab::rng::stream;

fn small_pair(seed: u64) -> (AutoRegressiveLM, AutoRegressiveLM) {
    let vocab = Vocabulary::new(2).unwrap();
    let hasher = PromptHasher::new(seed, 2);
    let scales = InitScales {
        prompt: 0.8,
        context: 0.8,
        bias: 0.5,
        eos_bias: 0.0,
        context_decay: 1.0,
    };
    let p_shape = ModelShape::new(vocab, 2, 4, 3).unwrap();
    let q_shape = ModelShape::new(vocab, 1, 4, 3).unwrap();
    let p = AutoRegressiveLM::random(p_shape, hasher, 1.0, &scales, &mut stream(seed, &[1])).unwrap();
    let q = AutoRegressiveLM::random(q_shape, hasher, 1.3, &scales, &mut stream(seed, &[2])).unwrap();
    (p, q)
}

#[test]
fn monte_carlo_agrees_with_enumeration() {
    let prompts = vec![Sequence::prompt(vec![0, 1]), Sequence::prompt(vec![1])];
    for kind in DivergenceKind::ALL {
        for case in 0..20u64 {
            let (p, q) = small_pair(100 + case);
            let exact = exact_divergence(&p, &q, &prompts, kind, 3).unwrap();
            let mc = estimate(&p, &q, kind, &prompts, 2000, 7 + case).unwrap();
            let gap = (mc.mean - exact).abs();
            assert!(
                gap <= 3.0 * mc.std_error,
                "{kind:?} case {case}: exact {exact}, estimate {} +- {}",
                mc.mean,
                mc.std_error
            );
        }
    }
}

#[test]
fn divergence_of_model_with_itself_is_zero() {
    let (p, _) = small_pair(3);
    let prompts = vec![Sequence::prompt(vec![1, 1])];
    for kind in DivergenceKind::ALL {
        assert_eq!(estimate(&p, &p, kind, &prompts, 50, 1).unwrap().mean, 0.0);
        assert!(exact_divergence(&p, &p, &prompts, kind, 3).unwrap().abs() < 1e-12);
    }
}

#[test]
fn token_sampling_matches_probabilities() {
    let d = TokenDistribution::new(vec![0.5, 0.2, 0.15, 0.1, 0.05]).unwrap();
    let n = 200_000;
    let mut counts = [0usize; 5];
    let mut rng = stream(5, &[]);
    for _ in 0..n {
        counts[d.sample(&mut rng)] += 1;
    }
    for (c, p) in counts.iter().zip(d.probs()) {
        let freq = *c as f64 / n as f64;
        let se = (p * (1.0 - p) / n as f64).sqrt();
        assert!((freq - p).abs() < 4.0 * se, "frequency {freq} vs {p}");
    }
}

#[test]
fn uniform_model_has_truncated_geometric_lengths() {
    let vocab = Vocabulary::new(3).unwrap();
    let max_len = 6;
    let shape = ModelShape::new(vocab, 0, 0, max_len).unwrap();
    let model = AutoRegressiveLM::zeros(shape, PromptHasher::new(0, 1), 1.0).unwrap();
    // Each position below the cap stops with probability 1/4.
    let cont: f64 = 0.75;
    let mean: f64 = (1..=max_len).map(|l| cont.powi(l as i32)).sum();
    let n = 50_000;
    let mut rng = stream(11, &[]);
    let x = Sequence::prompt(vec![]);
    let lengths: Vec<f64> = (0..n).map(|_| model.sample_response(&x, &mut rng).len() as f64).collect();
    let avg = lengths.iter().sum::<f64>() / n as f64;
    let var = lengths.iter().map(|l| (l - avg).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    assert!((avg - mean).abs() < 4.0 * se, "mean length {avg} vs {mean}");
    assert!(lengths.iter().all(|&l| l <= max_len as f64));
}

#[test]
fn zipf_zero_prompts_are_uniform() {
    let cfg = PromptConfig {
        vocab: Vocabulary::new(8).unwrap(),
        min_len: 4,
        max_len: 4,
        zipf_exponent: 0.0,
    };
    let ds = generate_prompts(&cfg, 20_000, Split::Train, 4).unwrap();
    let mut counts = [0usize; 8];
    for x in &ds.prompts {
        for &t in x.tokens() {
            counts[t as usize] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let p = 1.0 / 8.0;
    let se = (p * (1.0 - p) / total as f64).sqrt();
    for c in counts {
        let freq = c as f64 / total as f64;
        assert!((freq - p).abs() < 4.0 * se, "frequency {freq}");
    }
}

#[test]
fn mixture_draws_offline_at_alpha() {
    let vocab = Vocabulary::new(3).unwrap();
    let shape = ModelShape::new(vocab, 1, 0, 3).unwrap();
    let model = AutoRegressiveLM::zeros(shape, PromptHasher::new(0, 1), 1.0).unwrap();
    let prompts = PromptDataset {
        prompts: (0..8).map(|i| Sequence::prompt(vec![i % 3])).collect(),
        split: Split::Train,
        seed: 0,
    };
    let offline = LabeledDataset {
        vocab_size: 3,
        seed: 0,
        generator: Generator::Teacher,
        pairs: prompts.prompts.iter().map(|x| Example::new(x.clone(), Sequence::response(vec![1]))).collect(),
    };
    let spec = DataSourceSpec {
        kind: SourceKind::Mixture { alpha: 0.9 },
        offline: Some(Arc::new(offline)),
    };
    let mut sampler = BatchSampler::new(spec, prompts.len(), 2, 21).unwrap();
    let steps = 5000u64;
    let offline_steps = (0..steps)
        .filter(|&s| sampler.next_batch(&prompts, &model, &model, s).unwrap().1 == BatchOrigin::Offline)
        .count();
    let freq = offline_steps as f64 / steps as f64;
    let se = (0.9f64 * 0.1 / steps as f64).sqrt();
    assert!((freq - 0.9).abs() < 4.0 * se, "offline fraction {freq}");
}
