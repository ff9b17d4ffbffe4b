use proptest::prelude::*;
use triplenet_core::cost::{analyze, compare, CSV_HEADER};
use triplenet_core::graph::*;

fn graph(v: Variant, size: usize) -> ModelGraph {
    build(&ModelConfig::new(v).with_input_size(size)).unwrap()
}

#[test]
fn params_equal_materialized_scalars() {
    for size in [32, 224] {
        for v in [Variant::S, Variant::B] {
            let g = graph(v, size);
            let w = Weights::<f32>::init(&g, 0).unwrap();
            assert_eq!(analyze(&g, 1).totals.params, w.trainable_scalars() as u64);
        }
    }
}

#[test]
fn totals_are_column_sums() {
    let r = analyze(&graph(Variant::B, 64), 2);
    let t = r.totals_where(|_| true);
    assert_eq!(t, r.totals);
    assert_eq!(r.totals.macs, r.rows.iter().map(|x| x.macs).sum::<u64>());
}

#[test]
fn costs_are_additive_over_stages() {
    let g = graph(Variant::S, 224);
    let r = analyze(&g, 1);
    let mut sum = 0u64;
    for stage in g.stages() {
        let names: Vec<&str> = stage.nodes.iter().map(|&id| g.node(id).name.as_str()).collect();
        sum += r.totals_where(|row| names.contains(&row.name.as_str())).madd;
    }
    let input = r.rows.iter().find(|x| x.kind == "input").unwrap().madd;
    assert_eq!(sum + input, r.totals.madd);
}

#[test]
fn madd_to_mac_ratio_near_two() {
    for v in [Variant::S, Variant::B] {
        let r = analyze(&graph(v, 224), 1);
        let ratio = r.totals.madd as f64 / r.totals.macs as f64;
        assert!((1.9..=2.1).contains(&ratio), "{ratio}");
    }
}

#[test]
fn param_bands() {
    let s = analyze(&graph(Variant::S, 224), 1).totals.params;
    let b = analyze(&graph(Variant::B, 224), 1).totals.params;
    assert!((8_000_000..=11_500_000).contains(&s), "{s}");
    assert!((10_500_000..=15_000_000).contains(&b), "{b}");
}

#[test]
fn b_adds_parameters_but_little_compute() {
    let s = analyze(&graph(Variant::S, 224), 1);
    let b = analyze(&graph(Variant::B, 224), 1);
    let d = compare(&b, &s);
    let params = d.iter().find(|c| c.column == "params").unwrap();
    let macs = d.iter().find(|c| c.column == "macs").unwrap();
    assert!(params.absolute > 0);
    assert!(macs.relative < params.relative);
    assert!(compare(&s, &s).iter().all(|c| c.absolute == 0));
}

#[test]
fn csv_header() {
    let csv = analyze(&graph(Variant::S, 32), 1).to_csv();
    assert_eq!(csv.lines().next().unwrap(), CSV_HEADER);
    assert_eq!(CSV_HEADER, "name,kind,out_shape,params,macs,madd,act_bytes,rw_bytes");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn doubling_input_quadruples_conv_macs(
        v in prop::sample::select(vec![Variant::S, Variant::B]),
        mult in 1usize..=3,
    ) {
        let small = analyze(&graph(v, 32 * mult), 1);
        let large = analyze(&graph(v, 64 * mult), 1);
        for (a, b) in small.rows.iter().zip(&large.rows) {
            prop_assert_eq!(&a.name, &b.name);
            prop_assert_eq!(a.params, b.params);
            if a.kind == "conv" {
                prop_assert_eq!(4 * a.macs, b.macs);
            }
        }
    }
}
