use diffpath::data::cifar::{encode_cifar10, parse_cifar10};
use diffpath::data::idx::{encode_idx, parse_idx};
use diffpath::data::pnm::{encode_pnm, parse_pnm};
use diffpath::data::{LabeledDataset, Labels, Split};
use diffpath::model::arch;
use diffpath::model::dpwn::Container;
use diffpath::{Error, Model, Tensor};
use proptest::prelude::*;

fn mnist_like() -> (Vec<u8>, Vec<u8>) {
    let d = LabeledDataset::new(
        [1, 28, 28],
        (0..3 * 784).map(|i| (i % 256) as u8).collect(),
        Labels::Single(vec![0, 5, 9]),
        Split::Test,
    )
    .unwrap();
    encode_idx(&d).unwrap()
}

fn cifar_like() -> Vec<u8> {
    let d = LabeledDataset::new(
        [3, 32, 32],
        (0..2 * 3072).map(|i| (i % 253) as u8).collect(),
        Labels::Single(vec![2, 7]),
        Split::Test,
    )
    .unwrap();
    encode_cifar10(&d).unwrap()
}

fn dpwn_like() -> Vec<u8> {
    Model::random(arch::toy(), 0).to_container().to_bytes().unwrap()
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::BadMagic { .. } => "magic",
        Error::UnsupportedVersion { .. } => "version",
        Error::Truncated { .. } => "truncated",
        Error::Header { .. } => "header",
        Error::CountMismatch { .. } => "count",
        _ => "other",
    }
}

#[derive(Debug, Clone)]
enum Mutation {
    Truncate(usize),
    Flip(usize, u8),
    Append(Vec<u8>),
}

fn apply(bytes: &[u8], m: &Mutation, header: usize) -> Vec<u8> {
    let mut b = bytes.to_vec();
    match m {
        Mutation::Truncate(n) => b.truncate(n % b.len()),
        Mutation::Flip(i, x) => {
            let i = i % header.min(b.len());
            b[i] ^= x | 1;
        }
        Mutation::Append(tail) => b.extend(tail),
    }
    b
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        any::<usize>().prop_map(Mutation::Truncate),
        (any::<usize>(), any::<u8>()).prop_map(|(i, x)| Mutation::Flip(i, x)),
        prop::collection::vec(any::<u8>(), 1..16).prop_map(Mutation::Append),
    ]
}

#[test]
fn distinct_error_kinds_per_corruption() {
    let (img, lbl) = mnist_like();
    let mut bad_magic = img.clone();
    bad_magic[2] = 9;
    assert_eq!(kind(&parse_idx(&bad_magic, &lbl).unwrap_err()), "magic");
    assert_eq!(kind(&parse_idx(&img[..100], &lbl).unwrap_err()), "truncated");
    let mut zero_dim = img.clone();
    zero_dim[8..12].fill(0);
    assert_eq!(kind(&parse_idx(&zero_dim, &lbl).unwrap_err()), "header");
    assert_eq!(kind(&parse_idx(&img, &lbl[..lbl.len() - 1]).unwrap_err()), "truncated");
    let mut short_count = lbl.clone();
    short_count[7] = 2;
    short_count.pop();
    assert_eq!(kind(&parse_idx(&img, &short_count).unwrap_err()), "count");

    let c = cifar_like();
    assert_eq!(kind(&parse_cifar10(&c[..c.len() - 5]).unwrap_err()), "truncated");
    let mut bad_label = c.clone();
    bad_label[0] = 200;
    assert_eq!(kind(&parse_cifar10(&bad_label).unwrap_err()), "header");

    let d = dpwn_like();
    let mut bad = d.clone();
    bad[0] ^= 0xff;
    assert_eq!(kind(&Container::from_bytes(&bad).unwrap_err()), "magic");
    assert_eq!(kind(&Container::from_bytes(&d[..6]).unwrap_err()), "truncated");
    assert_eq!(kind(&Container::from_bytes(&d[..d.len() - 1]).unwrap_err()), "truncated");

    let p = encode_pnm(&Tensor::zeros(&[3, 4, 4])).unwrap();
    let mut bad = p.clone();
    bad[1] = b'9';
    assert_eq!(kind(&parse_pnm(&bad).unwrap_err()), "magic");
    assert_eq!(kind(&parse_pnm(&p[..p.len() - 1]).unwrap_err()), "truncated");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(400))]

    #[test]
    fn mutated_idx_never_panics(m in mutation(), target_labels in any::<bool>()) {
        let (img, lbl) = mnist_like();
        let r = if target_labels {
            parse_idx(&img, &apply(&lbl, &m, 8))
        } else {
            parse_idx(&apply(&img, &m, 16), &lbl)
        };
        if let Err(e) = r {
            prop_assert_ne!(kind(&e), "other");
        }
    }

    #[test]
    fn mutated_cifar_never_panics(m in mutation()) {
        if let Err(e) = parse_cifar10(&apply(&cifar_like(), &m, 3073)) {
            prop_assert_ne!(kind(&e), "other");
        }
    }

    #[test]
    fn mutated_dpwn_never_panics(m in mutation()) {
        let d = dpwn_like();
        let r = Container::from_bytes(&apply(&d, &m, d.len()));
        if let Err(e) = r {
            prop_assert!(matches!(kind(&e), "magic" | "version" | "truncated" | "header" | "other"));
        }
    }

    #[test]
    fn mutated_pnm_never_panics(m in mutation()) {
        let p = encode_pnm(&Tensor::filled(&[2, 3], 0.5)).unwrap();
        let _ = parse_pnm(&apply(&p, &m, 12));
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = parse_idx(&bytes, &bytes);
        let _ = parse_cifar10(&bytes);
        let _ = Container::from_bytes(&bytes);
        let _ = parse_pnm(&bytes);
    }
}
