mod common;

use std::collections::HashSet;
use std::net::Ipv4Addr;

use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;

use portdrift::datagen::{self, mutate_addresses, scan_pair_from_nscr, DatasetKind, DatasetSpec, MutationSpec};
use portdrift::encode::{one_hot, prune};
use portdrift::evalharness::{aggregate, read_results, run_experiment, CorpusEntry, ExperimentSpec, GeneratedDataset};
use portdrift::hostmatch::{compare_scans, greedy_match, read_nscr_from, write_nscr_to, MatchedPair, Nscr, NscrEntry, StateChangeLabel};
use portdrift::mlcore::{
    kmeans, knn_avg_distance, silhouette, Clustering, DistanceMatrix, IsolationForest, IsolationForestParams,
};
use portdrift::pipelines::{run_pipeline, Algorithm, PipelineConfig};
use portdrift::scanmodel::{
    ingest_scan, read_dataset_from, write_dataset_to, write_scan_xml, HostScan, MacAddr, PortKey, PortState,
    ScanDataset,
};
use portdrift::triage::{debugging_cost, run_selection, TriageSession};

fn ip(i: usize) -> Ipv4Addr {
    Ipv4Addr::from(0x0a00_0000 + i as u32)
}

fn arb_state() -> impl Strategy<Value = PortState> {
    prop::sample::select(PortState::ALL.to_vec())
}

/// Mostly-unchanged labels so that pruning and duplicates both occur.
fn arb_label() -> impl Strategy<Value = StateChangeLabel> {
    prop_oneof![
        3 => Just(StateChangeLabel::UNCHANGED_CLOSED),
        1 => (0..16usize).prop_map(|i| StateChangeLabel::from_index(i).unwrap()),
    ]
}

fn arb_nscr(min_rows: usize, max_rows: usize) -> impl Strategy<Value = Nscr> {
    (1..5usize, min_rows..=max_rows).prop_flat_map(|(n_ports, n_rows)| {
        prop::collection::vec((prop::collection::vec(arb_label(), n_ports), any::<bool>()), n_rows).prop_map(
            move |rows| {
                let ports = (0..n_ports).map(|p| PortKey::tcp(20 + p as u16)).collect();
                let entries = rows
                    .into_iter()
                    .enumerate()
                    .map(|(i, (labels, vulnerable))| NscrEntry {
                        ip_initial: Some(ip(i)),
                        ip_updated: Some(ip(i)),
                        mac: None,
                        labels,
                        vulnerable: Some(vulnerable),
                    })
                    .collect();
                Nscr::new(ports, entries).unwrap()
            },
        )
    })
}

fn arb_scan() -> impl Strategy<Value = ScanDataset> {
    prop::collection::vec(
        (
            prop::option::of(any::<[u8; 6]>()),
            prop::collection::btree_map(1..8u16, arb_state(), 0..5),
        ),
        1..12,
    )
    .prop_map(|hosts| {
        let entries = hosts
            .into_iter()
            .enumerate()
            .map(|(i, (mac, ports))| {
                let mut h = HostScan::new(ip(i), mac.map(MacAddr));
                for (p, s) in ports {
                    h = h.with_port(PortKey::tcp(p), s);
                }
                h
            })
            .collect();
        ScanDataset::new("scan", entries).unwrap()
    })
}

fn matrix_of(nscr: &Nscr) -> Array2<f64> {
    one_hot(nscr).unwrap().values().clone()
}

fn is_vuln(nscr: &Nscr) -> impl Fn(&portdrift::pipelines::RankedHost) -> bool + '_ {
    move |h| nscr.entries()[h.entry].vulnerable == Some(true)
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn ingest_is_deterministic_and_round_trips(ds in arb_scan()) {
        let xml = write_scan_xml(&ds);
        let a = ingest_scan(&xml, PortState::Closed).unwrap();
        let b = ingest_scan(&xml, PortState::Closed).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.entries(), ds.entries());
        prop_assert_eq!(a.port_universe(), ds.port_universe());
        for h in a.entries() {
            for p in a.port_universe() {
                prop_assert!(PortState::ALL.contains(&h.state(p)));
            }
        }
    }

    #[test]
    fn dataset_csv_round_trips(ds in arb_scan()) {
        let mut buf = Vec::new();
        write_dataset_to(&ds, &mut buf).unwrap();
        let back = read_dataset_from(buf.as_slice(), ds.label()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn nscr_csv_round_trips(n in arb_nscr(1, 20)) {
        let mut buf = Vec::new();
        write_nscr_to(&n, &mut buf).unwrap();
        prop_assert_eq!(read_nscr_from(buf.as_slice()).unwrap(), n);
    }

    #[test]
    fn matching_is_a_partial_bijection(a in arb_scan(), b in arb_scan(), seed in any::<u64>()) {
        let pairs = greedy_match(&a, &b);
        let mut seen_a = HashSet::new();
        let mut seen_b = HashSet::new();
        for p in &pairs {
            if let Some(h) = p.initial() {
                prop_assert!(seen_a.insert(h.ip));
            }
            if let Some(h) = p.updated() {
                prop_assert!(seen_b.insert(h.ip));
            }
            if let Some(s) = p.score() {
                prop_assert!((0.0..=1.0).contains(&s.total));
            }
        }
        prop_assert_eq!(seen_a.len(), a.len());
        prop_assert_eq!(seen_b.len(), b.len());
        let matched = pairs.iter().filter(|p| matches!(p, MatchedPair::Matched { .. })).count();
        prop_assert_eq!(matched, a.len().min(b.len()));

        // input order does not matter
        let mut rng = common::rng(seed);
        let mut ea = a.entries().to_vec();
        let mut eb = b.entries().to_vec();
        ea.shuffle(&mut rng);
        eb.shuffle(&mut rng);
        let shuffled = greedy_match(&ScanDataset::new("a", ea).unwrap(), &ScanDataset::new("b", eb).unwrap());
        prop_assert_eq!(shuffled, pairs);
    }

    #[test]
    fn one_hot_distance_counts_differing_ports(n in arb_nscr(2, 12)) {
        let x = matrix_of(&n);
        prop_assert_eq!(x.ncols(), 16 * n.ports().len());
        for row in x.rows() {
            prop_assert_eq!(row.sum(), n.ports().len() as f64);
        }
        let e = n.entries();
        for i in 0..e.len() {
            for j in 0..e.len() {
                let differing = e[i].labels.iter().zip(&e[j].labels).filter(|(a, b)| a != b).count();
                let d = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum().sqrt();
                prop_assert!((d - (2.0 * differing as f64).sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pruning_is_idempotent_row_filter(n in arb_nscr(1, 20)) {
        let p = prune(&n);
        prop_assert!(p.kept.entries().iter().all(NscrEntry::has_change));
        prop_assert!(p.removed.iter().all(|e| !e.has_change()));
        prop_assert_eq!(p.kept.len() + p.removed.len(), n.len());
        prop_assert_eq!(&prune(&p.kept).kept, &p.kept);
        if !p.kept.is_empty() {
            let full = one_hot(&n).unwrap();
            let kept = one_hot(&p.kept).unwrap();
            let selected = full.select_rows(&p.kept_index);
            prop_assert_eq!(kept.values(), selected.values());
        }
    }

    #[test]
    fn sknn_and_sif_rank_by_descending_score(n in arb_nscr(3, 25), k in 1..4usize, seed in any::<u64>()) {
        for cfg in [
            PipelineConfig::new(Algorithm::Sknn, Some(k.min(n.len() - 1)), Some(3), false, seed).unwrap(),
            PipelineConfig::new(Algorithm::Sif, None, Some(3), false, seed).unwrap(),
        ] {
            let r = run_pipeline(&n, &cfg).unwrap().ranking;
            let mut entries = r.order();
            entries.sort_unstable();
            prop_assert_eq!(entries, (0..n.len()).collect::<Vec<_>>());
            for (i, w) in r.hosts.windows(2).enumerate() {
                prop_assert_eq!(w[0].rank, i + 1);
                prop_assert!(w[0].anomaly_score.unwrap() >= w[1].anomaly_score.unwrap());
            }
        }
    }

    #[test]
    fn clustered_rankings_visit_smaller_clusters_first(n in arb_nscr(3, 16), seed in any::<u64>()) {
        for algo in [Algorithm::Skm, Algorithm::Shac] {
            let cfg = PipelineConfig::new(algo, None, Some(2), false, seed).unwrap();
            let r = run_pipeline(&n, &cfg).unwrap().ranking;
            let tags: Vec<_> = r.hosts.iter().map(|h| h.cluster.unwrap()).collect();
            for w in tags.windows(2) {
                prop_assert!(w[0].size <= w[1].size);
            }
            // each cluster occupies one contiguous block of the ranking
            let mut finished = HashSet::new();
            for w in tags.windows(2) {
                if w[0].id != w[1].id {
                    prop_assert!(finished.insert(w[0].id));
                    prop_assert!(!finished.contains(&w[1].id));
                }
            }
        }
    }

    #[test]
    fn stopping_condition_does_not_change_the_ranking(n in arb_nscr(3, 20), a in 1..10usize, b in 1..10usize) {
        for algo in [Algorithm::Sknn, Algorithm::Sif, Algorithm::Skm, Algorithm::Shac] {
            let k = algo.uses_k().then_some(2.min(n.len() - 1));
            let ra = run_pipeline(&n, &PipelineConfig::new(algo, k, Some(a), true, 3).unwrap());
            let rb = run_pipeline(&n, &PipelineConfig::new(algo, k, Some(b), true, 3).unwrap());
            match (ra, rb) {
                (Ok(ra), Ok(rb)) => prop_assert_eq!(ra.ranking.hosts, rb.ranking.hosts),
                (Err(ea), Err(eb)) => prop_assert_eq!(ea.to_string(), eb.to_string()),
                _ => prop_assert!(false, "only one of the runs failed"),
            }
        }
    }

    #[test]
    fn knn_agrees_with_brute_force(seed in any::<u64>(), n in 2..20usize, d in 1..6usize) {
        let mut rng = common::rng(seed);
        let x = common::binary_matrix(&mut rng, n, d);
        for k in 1..n {
            let got = knn_avg_distance(x.view(), k).unwrap();
            for (g, w) in got.iter().zip(common::brute_knn(&x, k)) {
                prop_assert!((g - w).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forest_scores_are_bounded_and_follow_row_ids(seed in any::<u64>(), n in 2..40usize, d in 1..5usize) {
        let mut rng = common::rng(seed);
        let x = common::continuous_matrix(&mut rng, n, d);
        let params = IsolationForestParams { trees: 20, subsample: 16.min(n), seed };
        let ids: Vec<u64> = (0..n as u64).map(|i| i * 7919 + 13).collect();
        let scores = IsolationForest::fit_with_ids(x.view(), &ids, &params).unwrap().score_rows(x.view());
        prop_assert!(scores.iter().all(|s| *s > 0.0 && *s < 1.0));

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let px = x.select(ndarray::Axis(0), &perm);
        let pids: Vec<u64> = perm.iter().map(|&i| ids[i]).collect();
        let pscores = IsolationForest::fit_with_ids(px.view(), &pids, &params).unwrap().score_rows(px.view());
        for (pos, &i) in perm.iter().enumerate() {
            prop_assert!((pscores[pos] - scores[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn silhouette_values_stay_in_range(seed in any::<u64>(), n in 2..25usize, k in 2..6usize) {
        let mut rng = common::rng(seed);
        let x = common::continuous_matrix(&mut rng, n, 3);
        let k = k.min(n);
        let mut assignment: Vec<usize> = (0..n).map(|i| i % k).collect();
        assignment.shuffle(&mut rng);
        let c = Clustering::new(k, assignment).unwrap();
        let report = silhouette(&DistanceMatrix::euclidean(x.view()), &c).unwrap();
        prop_assert!(report.per_point.iter().all(|s| (-1.0..=1.0).contains(s)));
        let mean = report.per_point.iter().sum::<f64>() / n as f64;
        prop_assert!((mean - report.score).abs() < 1e-12);
    }

    #[test]
    fn kmeans_is_reproducible(seed in any::<u64>(), n in 2..30usize, k in 1..5usize) {
        let mut rng = common::rng(seed);
        let x = common::binary_matrix(&mut rng, n, 4);
        let k = k.min(n);
        prop_assert_eq!(kmeans(x.view(), k, seed).unwrap(), kmeans(x.view(), k, seed).unwrap());
    }

    #[test]
    fn recall_grows_with_the_stopping_condition(verdicts in prop::collection::vec(any::<bool>(), 1..40), a in 1..10usize, b in 1..10usize) {
        let (lo, hi) = (a.min(b), a.max(b));
        let r_lo = run_selection(&verdicts, lo, |v| *v).unwrap();
        let r_hi = run_selection(&verdicts, hi, |v| *v).unwrap();
        prop_assert!(r_lo.recall.unwrap() <= r_hi.recall.unwrap());
        prop_assert!(r_lo.inspected <= r_hi.inspected);
        // no stopping condition: everything is inspected and everything is found
        let all = run_selection(&verdicts, verdicts.len() + 1, |v| *v).unwrap();
        prop_assert_eq!(all.recall, Some(1.0));
        prop_assert_eq!(all.inspected, verdicts.len());
    }

    #[test]
    fn debugging_cost_ignores_the_tail(verdicts in prop::collection::vec(any::<bool>(), 1..40), seed in any::<u64>()) {
        prop_assume!(verdicts.contains(&true));
        let dc = debugging_cost(&verdicts, |v| *v).unwrap();
        let mut permuted = verdicts.clone();
        permuted[dc..].shuffle(&mut common::rng(seed));
        prop_assert_eq!(debugging_cost(&permuted, |v| *v).unwrap(), dc);
        prop_assert_eq!(dc, verdicts.iter().rposition(|v| *v).unwrap() + 1);
    }

    #[test]
    fn session_without_sc_finds_everything(n in arb_nscr(3, 20)) {
        let ranking = run_pipeline(&n, &PipelineConfig::new(Algorithm::Sknn, Some(1), None, false, 0).unwrap())
            .unwrap()
            .ranking;
        let total = n.vulnerable_count();
        let mut s = TriageSession::new(ranking.hosts.clone(), None).unwrap().with_total_vulnerable(total);
        while let Some(h) = s.next().cloned() {
            s.record_verdict_at(h.rank, is_vuln(&n)(&h), 0).unwrap();
        }
        let report = s.report();
        prop_assert_eq!(report.recall, Some(1.0));
        prop_assert_eq!(report.inspected, n.len());
        let replayed = TriageSession::replay(ranking.hosts.clone(), &s.export_log()).unwrap();
        prop_assert_eq!(replayed.report(), report.clone());
        if total > 0 {
            prop_assert_eq!(report.dc, Some(debugging_cost(&ranking.hosts, is_vuln(&n)).unwrap()));
        }
    }

    #[test]
    fn session_replay_matches_live_session(n in arb_nscr(3, 20), sc in 1..5usize, answered in 0..20usize) {
        let ranking = run_pipeline(&n, &PipelineConfig::new(Algorithm::Sknn, Some(1), Some(sc), false, 0).unwrap())
            .unwrap()
            .ranking;
        let mut s = TriageSession::new(ranking.hosts.clone(), Some(sc)).unwrap();
        for _ in 0..answered {
            let Some(h) = s.next().cloned() else { break };
            s.record_verdict_at(h.rank, is_vuln(&n)(&h), h.rank as u64).unwrap();
        }
        let replayed = TriageSession::replay(ranking.hosts, &s.export_log()).unwrap();
        prop_assert_eq!(replayed.report(), s.report());
        prop_assert_eq!(replayed.next(), s.next());
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn generated_datasets_are_valid_and_reproducible(
        kind in prop::sample::select(vec![DatasetKind::Synthetic, DatasetKind::Real, DatasetKind::Realistic]),
        vuln in 0..50usize,
        seed in any::<u64>(),
    ) {
        let spec = DatasetSpec { total: 150, ..DatasetSpec::new(kind, vuln, seed) };
        let spec = DatasetSpec { valid_change_count: spec.valid_change_count.min(80), ..spec };
        let a = datagen::generate(&spec).unwrap();
        let b = datagen::generate(&spec).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), 150);
        prop_assert_eq!(a.vulnerable_count(), vuln);
        prop_assert!(a.has_ground_truth());
        let ips: HashSet<_> = a.entries().iter().map(|e| e.display_ip()).collect();
        prop_assert_eq!(ips.len(), a.len());
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_nscr_to(&a, &mut ba).unwrap();
        write_nscr_to(&b, &mut bb).unwrap();
        prop_assert_eq!(ba, bb);
    }

    #[test]
    fn mutated_scans_match_back_to_the_report(vuln in 0..20usize, seed in any::<u64>(), n_ip in 0..20usize, n_mac in 0..20usize) {
        let spec = DatasetSpec { total: 60, valid_change_count: 10, ..DatasetSpec::new(DatasetKind::Real, vuln, seed) };
        let nscr = datagen::generate(&spec).unwrap();
        let (initial, updated) = scan_pair_from_nscr(&nscr, seed).unwrap();
        let m = mutate_addresses(&initial, &updated, &MutationSpec { n_ip, n_mac, both: false, seed }).unwrap();
        prop_assert_eq!(compare_scans(&m.initial, &m.updated), m.expected);
    }

    #[test]
    fn experiments_are_deterministic_and_aggregates_order_free(seed in any::<u64>()) {
        let spec = ExperimentSpec {
            corpus: vec![CorpusEntry::Generated {
                generate: GeneratedDataset { kind: DatasetKind::Synthetic, vulnerable: 10, seed, total: Some(120) },
            }],
            configs: vec![
                PipelineConfig::sknn15_sc20(0),
                PipelineConfig::new(Algorithm::If, None, None, true, 0).unwrap(),
            ],
            repetitions: 3,
            master_seed: seed,
            omit_timing: true,
        };
        let (mut a, mut b) = (Vec::new(), Vec::new());
        let summary = run_experiment(&spec, &mut a).unwrap();
        prop_assert!(summary.errors.is_empty(), "{:?}", summary.errors);
        run_experiment(&spec, &mut b).unwrap();
        prop_assert_eq!(&a, &b);
        let sorted = read_results(a.as_slice()).unwrap();
        prop_assert_eq!(sorted.len(), summary.rows);
        let mut rows = sorted.clone();
        rows.shuffle(&mut common::rng(seed));
        prop_assert_eq!(aggregate(&rows), aggregate(&sorted));
    }
}
