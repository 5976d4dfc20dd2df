//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the report is always printed; exits non-zero on any failure.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::time::Instant;

use genrec::corpus::{corpus_stats, Format, InteractionLog};
use genrec::decode::{self, BeamConfig, DecodeStats, IdTrie, SequenceScorer};
use genrec::embed::bpr::{bpr_gradients, bpr_loss, BprMode, BprSample, MfModel};
use genrec::embed::gcn::{gcn_gradients, gcn_loss, GcnModel, NormalizedAdjacency};
use genrec::eval::{hit_ratio_at_k, ndcg_at_k};
use genrec::graph::{Node, NodeKind, WeightedGraph};
use genrec::indexer::{hierarchical_ids, HierarchyParams, Token, MAX_TOKEN};
use genrec::model::{param_count, Accounting, ModelConfig, Seq2SeqModel, Vocabulary};
use genrec::pipeline::{Pipeline, RunConfig, RunSummary};
use genrec::spectral::{spectral_cluster, ClusterLabels};
use genrec::synth::random_log;
use genrec::Error;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e2s(e: Error) -> String {
    format!("error[{}]: {e}", e.category())
}

// ---------------------------------------------------------------- 1, 2

fn full_shape(w: usize) -> ModelConfig {
    ModelConfig {
        d: 512,
        w,
        enc_layers: 6,
        dec_layers: 6,
        heads: 8,
        ..ModelConfig::default()
    }
}

fn c1_accounting() -> Outcome {
    let table = [(16, 35.88e6), (32, 36.06e6), (64, 36.46e6), (2048, 60.75e6)];
    let mut parts = Vec::new();
    for (w, reported) in table {
        let got = param_count(&full_shape(w), 32128, Accounting::T5Compatible) as f64;
        let rel = (got - reported) / reported;
        parts.push(format!("w={w}: {got:.0} ({:+.2}%)", rel * 100.0));
        ensure(rel.abs() <= 0.02, || format!("w={w}: {got} vs {reported}"))?;
    }
    Ok(parts.join(", "))
}

fn c2_delta() -> Outcome {
    let v = Vocabulary::default().len();
    let a = param_count(&full_shape(16), v, Accounting::Actual);
    let b = param_count(&full_shape(32), v, Accounting::Actual);
    let expected = 12 * 2 * 512 * 16;
    ensure(b - a == expected, || format!("delta {} != {expected}", b - a))?;
    let t5 = param_count(&full_shape(32), 32128, Accounting::T5Compatible)
        - param_count(&full_shape(16), 32128, Accounting::T5Compatible);
    ensure(t5 == expected, || format!("t5-mode delta {t5}"))?;
    // A built model agrees with the closed form.
    let small = ModelConfig {
        d: 32,
        w: 8,
        enc_layers: 2,
        dec_layers: 2,
        heads: 4,
        ..ModelConfig::default()
    };
    let built = Seq2SeqModel::new(small.clone(), Vocabulary::default()).map_err(e2s)?;
    ensure(built.num_params() as u64 == param_count(&small, v, Accounting::Actual), || {
        "closed form disagrees with the built model".into()
    })?;
    Ok(format!(
        "delta {} exactly (0.197M; the reference totals differ by 0.18M)",
        b - a
    ))
}

// ---------------------------------------------------------------- 3

fn c3_stats() -> Outcome {
    let log = random_log(22361, 12101, 198502, 3).map_err(e2s)?;
    let reparsed = InteractionLog::parse(&log.to_text(Format::Tsv), Format::Tsv).map_err(e2s)?;
    let s = corpus_stats(&reparsed);
    ensure(
        (s.num_users, s.num_items, s.num_interactions) == (22361, 12101, 198502),
        || format!("{s:?}"),
    )?;
    let pct = format!("{:.2}", s.sparsity * 100.0);
    ensure(pct == "99.93", || format!("sparsity {pct}"))?;
    // Independent count on smaller random logs, including duplicate records.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for case in 0..200 {
        let (m, n) = (rng.random_range(1..30), rng.random_range(1..30));
        let k = rng.random_range(m.max(n)..m.max(n) * 4);
        let log = random_log(m, n, k, case).map_err(e2s)?;
        let users: HashSet<_> = log.records().iter().map(|r| r.user).collect();
        let items: HashSet<_> = log.records().iter().map(|r| r.item).collect();
        let oracle = 1.0 - k as f64 / (users.len() * items.len()) as f64;
        let s = corpus_stats(&log);
        ensure(s.sparsity == oracle && s.num_interactions == k, || {
            format!("case {case}: {} vs {oracle}", s.sparsity)
        })?;
    }
    Ok(format!(
        "synthetic log at reference size: sparsity {pct}% (raw data not bundled); 200 random logs match"
    ))
}

// ---------------------------------------------------------------- 4, 5

fn random_ids(count: usize, params: HierarchyParams, seed: u64) -> Vec<Vec<Token>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = params.clusters;
    hierarchical_ids(count, params, |s| Ok(s.iter().map(|_| rng.random_range(1..=n)).collect()))
        .expect("random hierarchy")
        .ids
}

fn tiny_model(seed: u64) -> Seq2SeqModel {
    let config = ModelConfig {
        d: 16,
        w: 4,
        enc_layers: 1,
        dec_layers: 1,
        heads: 2,
        seed,
        ..ModelConfig::default()
    };
    Seq2SeqModel::new(config, Vocabulary::default()).expect("valid shape")
}

fn random_prompt(model: &Seq2SeqModel, rng: &mut ChaCha8Rng) -> Vec<u32> {
    let len = rng.random_range(1..=4);
    let id: Vec<Token> = (0..len).map(|_| rng.random_range(1..=MAX_TOKEN)).collect();
    model.prompt(genrec::model::vocab::DEFAULT_TEMPLATE, &id)
}

fn c4_no_hallucination() -> Outcome {
    let params = HierarchyParams {
        clusters: 8,
        max_cluster_size: 10,
        max_levels: 10,
    };
    let ids = random_ids(500, params, 4);
    let names: Vec<String> = (0..500).map(|i| format!("i{i}")).collect();
    let trie = IdTrie::from_ids(&ids, &names).map_err(e2s)?;
    let valid: HashSet<&[Token]> = ids.iter().map(Vec::as_slice).collect();
    let config = BeamConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let (mut decodes, mut outputs) = (0, 0);
    for m in 0..10 {
        let model = tiny_model(100 + m);
        for _ in 0..100 {
            let state = model.prepare(&random_prompt(&model, &mut rng)).map_err(e2s)?;
            let recs =
                decode::constrained_beam_search(&model, &state, &trie, &config, &mut DecodeStats::default())
                    .map_err(e2s)?;
            decodes += 1;
            let mut seen = HashSet::new();
            for r in &recs {
                outputs += 1;
                ensure(r.item < 500 && seen.insert(r.item), || format!("bad item {}", r.item))?;
                let id = trie.id(r.item);
                ensure(valid.contains(id) && ids[r.item] == id, || format!("{id:?} is not a catalogue id"))?;
                let replay = decode::sequence_logprob(&model, &state, &trie, id).map_err(e2s)?;
                ensure((replay - r.logprob).abs() < 1e-9, || "score does not replay".into())?;
            }
            ensure(recs.len() == config.topk, || format!("{} results", recs.len()))?;
        }
    }
    Ok(format!("{decodes} decodes, {outputs}/{outputs} outputs are catalogue ids"))
}

fn c5_exactness() -> Outcome {
    let params = HierarchyParams {
        clusters: 5,
        max_cluster_size: 4,
        max_levels: 10,
    };
    let ids = random_ids(50, params, 5);
    let names: Vec<String> = (0..50).map(|i| format!("i{i}")).collect();
    let trie = IdTrie::from_ids(&ids, &names).map_err(e2s)?;
    let model = tiny_model(55);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for case in 0..20 {
        let state = model.prepare(&random_prompt(&model, &mut rng)).map_err(e2s)?;
        let mut brute: Vec<(f64, usize)> = (0..50)
            .map(|i| decode::sequence_logprob(&model, &state, &trie, &ids[i]).map(|lp| (lp, i)))
            .collect::<Result<_, _>>()
            .map_err(e2s)?;
        brute.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| ids[a.1].cmp(&ids[b.1])));
        let config = BeamConfig {
            beam: 50,
            topk: 10,
            length_penalty: 0.0,
        };
        let recs = decode::constrained_beam_search(&model, &state, &trie, &config, &mut DecodeStats::default())
            .map_err(e2s)?;
        ensure(recs.len() == 10, || format!("case {case}: {} results", recs.len()))?;
        for (r, &(lp, item)) in recs.iter().zip(&brute) {
            ensure(r.item == item, || format!("case {case}: order differs"))?;
            worst = worst.max((r.logprob - lp).abs());
        }
        ensure(worst < 1e-6, || format!("case {case}: logprob error {worst:e}"))?;
    }
    Ok(format!("20 prompts, beam 50 equals brute force top-10, max |Δlogprob| {worst:.1e}"))
}

// ---------------------------------------------------------------- 6

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

fn c6_gradients() -> Outcome {
    const H: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(6);

    // GCN on a small random graph.
    let nodes: Vec<Node> = (0..9)
        .map(|index| Node {
            kind: NodeKind::Item,
            index,
        })
        .collect();
    let mut edges = Vec::new();
    for a in 0..9 {
        for b in a + 1..9 {
            if rng.random_bool(0.35) {
                edges.push((a, b, rng.random_range(1..4)));
            }
        }
    }
    let graph = WeightedGraph::from_edges(nodes, edges);
    let adj = NormalizedAdjacency::new(&graph);
    let labels = ClusterLabels::new((0..9).map(|_| rng.random_range(1..=3)).collect(), 3);
    let mut gcn = GcnModel::init(9, 4, 3, 1);
    let (_, g) = gcn_gradients(&gcn, &adj, &labels);
    let mut gcn_worst: f64 = 0.0;
    for _ in 0..30 {
        let which = rng.random_range(0..3);
        let (param, grad) = match which {
            0 => (&mut gcn.features, &g.features),
            1 => (&mut gcn.w1, &g.w1),
            _ => (&mut gcn.w2, &g.w2),
        };
        let (r, c) = (rng.random_range(0..param.nrows()), rng.random_range(0..param.ncols()));
        let analytic = grad[(r, c)];
        let orig = param[(r, c)];
        param[(r, c)] = orig + H;
        let plus = gcn_loss(&gcn, &adj, &labels);
        let param = match which {
            0 => &mut gcn.features,
            1 => &mut gcn.w1,
            _ => &mut gcn.w2,
        };
        param[(r, c)] = orig - H;
        let minus = gcn_loss(&gcn, &adj, &labels);
        let param = match which {
            0 => &mut gcn.features,
            1 => &mut gcn.w1,
            _ => &mut gcn.w2,
        };
        param[(r, c)] = orig;
        gcn_worst = gcn_worst.max(rel_err(analytic, (plus - minus) / (2.0 * H)));
    }
    ensure(gcn_worst < 1e-4, || format!("GCN rel err {gcn_worst:e}"))?;

    // BPR on 3 users × 4 items, both loss modes.
    let samples = vec![
        BprSample { user: 0, positive: 1, negatives: vec![0, 3] },
        BprSample { user: 1, positive: 2, negatives: vec![3] },
        BprSample { user: 2, positive: 0, negatives: vec![1, 2, 3] },
        BprSample { user: 0, positive: 3, negatives: vec![2] },
    ];
    let mut bpr_worst: f64 = 0.0;
    for mode in [BprMode::Standard, BprMode::SoftmaxWeighted] {
        let mut mf = MfModel::init(3, 4, 3, 0.5, 2);
        let (_, g) = bpr_gradients(&mf, &samples, mode);
        for _ in 0..24 {
            let user_side = rng.random_bool(0.5);
            let rows = if user_side { 3 } else { 4 };
            let (r, c) = (rng.random_range(0..rows), rng.random_range(0..3));
            let analytic = if user_side { g.users[(r, c)] } else { g.items[(r, c)] };
            let at = |delta: f64, mf: &mut MfModel| {
                let p = if user_side { &mut mf.users } else { &mut mf.items };
                p[(r, c)] += delta;
            };
            at(H, &mut mf);
            let plus = bpr_loss(&mf, &samples, mode);
            at(-2.0 * H, &mut mf);
            let minus = bpr_loss(&mf, &samples, mode);
            at(H, &mut mf);
            bpr_worst = bpr_worst.max(rel_err(analytic, (plus - minus) / (2.0 * H)));
        }
    }
    ensure(bpr_worst < 1e-4, || format!("BPR rel err {bpr_worst:e}"))?;

    // Toy Transformer.
    let config = ModelConfig {
        d: 8,
        w: 4,
        enc_layers: 1,
        dec_layers: 1,
        heads: 2,
        seed: 8,
        ..ModelConfig::default()
    };
    let mut model = Seq2SeqModel::new(config, Vocabulary::default()).map_err(e2s)?;
    // Spread the weights so gradients are not vanishingly small.
    for i in 0..model.params().len() {
        let p = model.params_mut().get_mut(i);
        p.mapv_inplace(|v| v * 5.0 + 0.01);
    }
    let pairs = vec![
        (model.prompt("recommend items for user", &[3, 7]), vec![5, 9, 1]),
        (model.prompt("recommend items for user", &[4]), vec![12, 1]),
    ];
    let (_, grads) = model.loss_and_gradients(&pairs).map_err(e2s)?;
    let mut tf_worst: f64 = 0.0;
    // The loss is O(1), so a central difference carries round-off near
    // 1e-15 / h; coordinates whose gradient sits below that floor are skipped.
    const TF_H: f64 = 1e-4;
    let (mut checked, mut skipped) = (0, 0);
    while checked < 30 {
        let i = rng.random_range(0..model.params().len());
        let (rows, cols) = model.params().get(i).dim();
        // Embedding rows for unused tokens have zero gradient; sample used rows too.
        let r = if rows > 100 {
            *[0, 1, 5, 9, 12, 1002, 1003, 1004, 1005, 5, 9].choose(&mut rng).unwrap()
        } else {
            rng.random_range(0..rows)
        };
        let c = rng.random_range(0..cols);
        let analytic = grads.at(i, r, c);
        let orig = model.params().get(i)[(r, c)];
        model.params_mut().get_mut(i)[(r, c)] = orig + TF_H;
        let plus = model.loss(&pairs).map_err(e2s)?;
        model.params_mut().get_mut(i)[(r, c)] = orig - TF_H;
        let minus = model.loss(&pairs).map_err(e2s)?;
        model.params_mut().get_mut(i)[(r, c)] = orig;
        let numeric = (plus - minus) / (2.0 * TF_H);
        if analytic.abs().max(numeric.abs()) < 1e-6 {
            skipped += 1;
            continue;
        }
        tf_worst = tf_worst.max(rel_err(analytic, numeric));
        checked += 1;
    }
    ensure(tf_worst < 1e-3, || format!("Transformer rel err {tf_worst:e}"))?;
    Ok(format!(
        "max rel err GCN {gcn_worst:.1e}, BPR {bpr_worst:.1e}, Transformer {tf_worst:.1e} (30/48/30 coordinates; {skipped} Transformer coordinates under the 1e-6 noise floor skipped)"
    ))
}

// ---------------------------------------------------------------- 7

/// Adjusted Rand Index from the contingency table.
fn ari(a: &[usize], b: &[usize]) -> f64 {
    let choose2 = |x: usize| (x * x.saturating_sub(1) / 2) as f64;
    let mut table: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ra: HashMap<usize, usize> = HashMap::new();
    let mut rb: HashMap<usize, usize> = HashMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *ra.entry(x).or_default() += 1;
        *rb.entry(y).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| choose2(v)).sum();
    let sa: f64 = ra.values().map(|&v| choose2(v)).sum();
    let sb: f64 = rb.values().map(|&v| choose2(v)).sum();
    let expected = sa * sb / choose2(a.len());
    let max = 0.5 * (sa + sb);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

fn c7_spectral() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..10 {
        let sizes: Vec<usize> = (0..3).map(|_| rng.random_range(3..25)).collect();
        let mut truth = Vec::new();
        let mut edges = Vec::new();
        let mut start = 0;
        for (c, &s) in sizes.iter().enumerate() {
            truth.extend(std::iter::repeat_n(c, s));
            for k in 1..s {
                // Spanning chain keeps the community connected.
                edges.push((start + k - 1, start + k, rng.random_range(1..5)));
                for j in 0..k - 1 {
                    if rng.random_bool(0.3) {
                        edges.push((start + j, start + k, rng.random_range(1..5)));
                    }
                }
            }
            start += s;
        }
        let mut order: Vec<usize> = (0..start).collect();
        order.shuffle(&mut rng);
        let nodes = order
            .iter()
            .map(|&index| Node {
                kind: NodeKind::User,
                index,
            })
            .collect();
        let mut pos = vec![0; start];
        for (p, &orig) in order.iter().enumerate() {
            pos[orig] = p;
        }
        let graph = WeightedGraph::from_edges(nodes, edges.iter().map(|&(a, b, w)| (pos[a], pos[b], w)));
        let labels = spectral_cluster(&graph, 3, trial).map_err(e2s)?;
        let truth_by_pos: Vec<usize> = order.iter().map(|&o| truth[o]).collect();
        let score = ari(labels.labels(), &truth_by_pos);
        ensure(score == 1.0, || format!("trial {trial}: ARI {score} for sizes {sizes:?}"))?;
    }
    Ok("ARI 1.0 on 10 random three-community graphs".into())
}

// ---------------------------------------------------------------- 8

fn c8_hierarchy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let sizes = [1, 2, 6, 57, 100, 101, 999, 1000, 2500, 5000];
    let mut runs = 0;
    let mut flagged = 0;
    for &count in &sizes {
        for clusters in [3, 20] {
            for m in [5, 100] {
                for labeler in 0..3 {
                    let params = HierarchyParams {
                        clusters,
                        max_cluster_size: m,
                        max_levels: 10,
                    };
                    let seed = rng.random();
                    let mut lrng = ChaCha8Rng::seed_from_u64(seed);
                    let result = hierarchical_ids(count, params, |s| {
                        Ok(match labeler {
                            0 => s.iter().map(|_| lrng.random_range(1..=clusters)).collect(),
                            // Heavily skewed: most entities land in cluster 1.
                            1 => s
                                .iter()
                                .map(|_| if lrng.random_bool(0.9) { 1 } else { lrng.random_range(1..=clusters) })
                                .collect(),
                            // Degenerate: never splits.
                            _ => vec![1; s.len()],
                        })
                    });
                    runs += 1;
                    let h = match result {
                        Ok(h) => h,
                        // A group still above 999 after K levels cannot be told apart by one ordinal.
                        Err(Error::IndexOverflow { size, .. }) if labeler > 0 && size > MAX_TOKEN as usize => {
                            flagged += 1;
                            continue;
                        }
                        Err(e) => return Err(format!("n={count} N={clusters} M={m}: {}", e2s(e))),
                    };
                    let unique: HashSet<&Vec<Token>> = h.ids.iter().collect();
                    ensure(unique.len() == count, || format!("n={count}: duplicate ids"))?;
                    ensure(
                        h.ids.iter().flatten().all(|&t| (1..=MAX_TOKEN).contains(&t)),
                        || "token out of range".into(),
                    )?;
                    let mut groups: BTreeMap<&Vec<Token>, usize> = BTreeMap::new();
                    for p in &h.pre_dedup {
                        *groups.entry(p).or_default() += 1;
                    }
                    let oversized = groups.values().any(|&g| g > m);
                    ensure(!oversized || h.depth_limited, || {
                        format!("n={count} N={clusters} M={m}: leaf group over M without the depth flag")
                    })?;
                    if h.depth_limited {
                        flagged += 1;
                    }
                    // Dedup only appends: every id extends its pre-dedup sequence.
                    ensure(
                        h.ids.iter().zip(&h.pre_dedup).all(|(id, p)| id.starts_with(p)),
                        || "dedup rewrote a prefix".into(),
                    )?;
                    let trie_ok = IdTrie::from_ids(&h.ids, &vec![String::new(); count]).is_ok();
                    ensure(trie_ok, || "ids are not prefix-free".into())?;
                }
            }
        }
    }
    Ok(format!("{runs} hierarchies up to 5000 entities, {flagged} depth-limited or overflowing as required"))
}

// ---------------------------------------------------------------- 10

fn c10_metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for case in 0..100 {
        let n = rng.random_range(1..40);
        let mut recs: Vec<usize> = (0..60).collect();
        recs.shuffle(&mut rng);
        recs.truncate(n);
        let truth = rng.random_range(0..60);
        let k = rng.random_range(1..25);
        let rank = recs.iter().take(k).position(|&r| r == truth);
        let hr = if rank.is_some() { 1.0 } else { 0.0 };
        let ndcg = rank.map_or(0.0, |r| 1.0 / ((r + 2) as f64).log2());
        ensure(hit_ratio_at_k(&recs, truth, k) == hr, || format!("case {case}: HR"))?;
        ensure(ndcg_at_k(&recs, truth, k) == ndcg, || format!("case {case}: NDCG"))?;
    }
    let at3 = ndcg_at_k(&[7, 8, 9, 10, 11], 9, 5);
    ensure(at3 == 0.5, || format!("rank 3: {at3}"))?;
    Ok("100 random cases equal the reference; NDCG(rank 3, K=5) = 0.5".into())
}

// ---------------------------------------------------------------- 9, 11, 12

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn desk_run(workdir: &Path) -> Result<(RunConfig, RunSummary, f64), String> {
    let mut config = RunConfig::load(&fixtures().join("desk.toml")).map_err(e2s)?;
    config.paths.workdir = workdir.to_path_buf();
    let start = Instant::now();
    let pipeline = Pipeline::new(&config).map_err(e2s)?;
    let summary = pipeline.run_all().map_err(e2s)?;
    pipeline.recommend(None, None).map_err(e2s)?;
    Ok((config, summary, start.elapsed().as_secs_f64()))
}

fn c9_learning(run: &Result<(RunConfig, RunSummary, f64), String>) -> Outcome {
    let (config, s, secs) = run.as_ref().map_err(Clone::clone)?;
    let hr = s.metrics.hr[&10];
    let baseline = 10.0 / 100.0;
    ensure(config.train.epochs <= 8, || format!("{} epochs", config.train.epochs))?;
    ensure(
        (config.model.d, config.model.w, config.model.enc_layers, config.model.dec_layers) == (64, 16, 2, 2),
        || "fixture is not the desk shape".into(),
    )?;
    ensure(hr >= 5.0 * baseline, || format!("HR@10 {hr:.3} < {:.2}", 5.0 * baseline))?;
    ensure(*secs < 600.0, || format!("pipeline took {secs:.0}s"))?;
    Ok(format!(
        "HR@10 {hr:.3} (random {baseline:.2}), NDCG@10 {:.3}, {} epochs, {secs:.1}s",
        s.metrics.ndcg[&10], config.train.epochs
    ))
}

fn c11_work(run: &Result<(RunConfig, RunSummary, f64), String>, workdir: &Path) -> Outcome {
    let (config, s, _) = run.as_ref().map_err(Clone::clone)?;
    let pipeline = Pipeline::new(&RunConfig {
        paths: genrec::pipeline::Paths {
            workdir: workdir.to_path_buf(),
            ..config.paths.clone()
        },
        ..config.clone()
    })
    .map_err(e2s)?;
    let log = InteractionLog::load(&config.paths.data, Format::Tsv).map_err(e2s)?;
    let index = pipeline.load_index(&log).map_err(e2s)?;
    let trie = IdTrie::build(&index.items).map_err(e2s)?;
    let st = &s.stats;
    let branching = trie.max_branching();
    ensure(st.max_scored_per_expansion <= branching, || {
        format!("{} tokens scored in one expansion, branching {branching}", st.max_scored_per_expansion)
    })?;
    let vocab = Vocabulary::default().len();
    let full = st.full_vocab_tokens(vocab);
    let ratio = st.scored_tokens as f64 / full as f64;
    ensure(ratio < 0.05, || format!("ratio {ratio:.4}"))?;
    Ok(format!(
        "≤{} tokens per expansion (max branching {branching}, N={}, M={}); {} scored vs {full} full-vocabulary ({:.2}%)",
        st.max_scored_per_expansion,
        config.index.clusters,
        config.index.max_cluster_size,
        st.scored_tokens,
        ratio * 100.0
    ))
}

fn c12_determinism(first: &Path, second: &Path) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| e.to_string())?;
    pool.install(|| desk_run(second))?;
    let files = [
        "index/users.idx",
        "index/items.idx",
        "model/loss.csv",
        "model/checkpoint.json",
        "reports/metrics.txt",
        "reports/stats.json",
        "recs/recommendations.tsv",
        "graphs/train.tsv",
    ];
    for f in files {
        let a = std::fs::read(first.join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(second.join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(a == b, || format!("{f} differs"))?;
    }
    Ok(format!(
        "{} artifacts byte-identical (default pool vs one thread)",
        files.len()
    ))
}

fn main() {
    // Honour libtest-style filtering flags without acting on them.
    let list_only = std::env::args().any(|a| a == "--list");
    if list_only {
        println!("acceptance: test");
        return;
    }
    let tmp = tempfile::tempdir().expect("temp dir");
    let (w1, w2) = (tmp.path().join("a"), tmp.path().join("b"));
    let mut results: Vec<(u32, &str, Outcome)> = vec![
        (1, "parameter accounting", c1_accounting()),
        (2, "parameter delta", c2_delta()),
        (3, "dataset statistics", c3_stats()),
        (4, "no hallucination", c4_no_hallucination()),
        (5, "constrained decoding exactness", c5_exactness()),
        (6, "gradient checks", c6_gradients()),
        (7, "spectral separation", c7_spectral()),
        (8, "hierarchical id invariants", c8_hierarchy()),
    ];
    let run = desk_run(&w1);
    results.push((9, "end-to-end learning signal", c9_learning(&run)));
    results.push((10, "metric oracle", c10_metrics()));
    results.push((11, "decoding work bound", c11_work(&run, &w1)));
    results.push((12, "determinism", run.as_ref().map_err(Clone::clone).and_then(|_| c12_determinism(&w1, &w2))));
    results.sort_by_key(|r| r.0);
    let mut failed = 0;
    for (n, name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:>2} {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
