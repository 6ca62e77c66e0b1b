//! Randomized comparator instances and lossless transport runs shared by the
//! sharing suite and the acceptance harness.

use semlink::channel::{Channel, ChannelConfig};
use semlink::codec::ChanCodecParams;
use semlink::mss::{partition, transport, MultiUserSemantics, PairMode, SymbolCounter};
use semlink::numeric::{RngStream, Tensor};

use super::oracles::brute_partition;

/// Random `K ≤ 5, L_s ≤ 8, 2 ≤ d_s ≤ 6` instance; some rows are copied or
/// shifted across users so both shared and private positions occur.
pub fn random_instance(rng: &mut RngStream) -> Vec<Vec<Vec<f64>>> {
    let k = 2 + rng.below(4);
    let l = 1 + rng.below(8);
    let d = 2 + rng.below(5);
    let base: Vec<Vec<f64>> = (0..l)
        .map(|_| {
            let s = 0.1 + 2.0 * rng.uniform();
            (0..d).map(|_| s * rng.normal()).collect()
        })
        .collect();
    (0..k)
        .map(|_| {
            base.iter()
                .map(|row| match rng.below(3) {
                    0 => row.clone(),
                    1 => {
                        let shift = rng.normal();
                        row.iter().map(|x| x + shift).collect()
                    }
                    _ => row.iter().map(|_| rng.normal() * (0.1 + 2.0 * rng.uniform())).collect(),
                })
                .collect()
        })
        .collect()
}

pub fn to_tensors(users: &[Vec<Vec<f64>>]) -> MultiUserSemantics {
    let (l, d) = (users[0].len(), users[0][0].len());
    MultiUserSemantics::new(users.iter().map(|u| Tensor::new([l, d], u.concat()).unwrap()).collect()).unwrap()
}

/// Compares the library partition with the brute-force oracle on
/// `instances` random problems; returns the first disagreement.
pub fn comparator_agrees(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = RngStream::new(seed, 0);
    for t in 0..instances {
        let users = random_instance(&mut rng);
        let all_pairs = rng.bernoulli(0.5);
        let eps = 3.0 * rng.uniform();
        let mode = if all_pairs {
            PairMode::AllPairs
        } else {
            PairMode::Consecutive
        };
        let p = partition(&to_tensors(&users), eps, mode).map_err(|e| e.to_string())?;
        let (shared, z_pub) = brute_partition(&users, eps, all_pairs);
        if p.shared_idx != shared {
            return Err(format!("instance {t}: shared {:?} vs oracle {shared:?}", p.shared_idx));
        }
        let private: Vec<usize> = (0..users[0].len()).filter(|i| !shared.contains(i)).collect();
        if p.private_idx != private {
            return Err(format!("instance {t}: private set differs"));
        }
        for (r, row) in z_pub.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if (p.z_pub.row(r)[c] - v).abs() > 1e-12 {
                    return Err(format!("instance {t}: Z_pub[{r}][{c}] differs"));
                }
            }
        }
        for (u, zp) in p.z_pri.iter().enumerate() {
            for (r, &i) in private.iter().enumerate() {
                if zp.row(r) != &users[u][i][..] {
                    return Err(format!("instance {t}: Z_pri of user {u} differs"));
                }
            }
        }
    }
    Ok(())
}

/// Noise-free identity channel.
pub fn identity_channel() -> Channel {
    Channel {
        cfg: ChannelConfig::default(),
        noise_var: 0.0,
    }
}

pub struct LosslessRun {
    pub max_err: f64,
    pub l_pub: usize,
    pub l_pri: usize,
    pub counter: SymbolCounter,
}

/// `K = 3` users whose first rows coincide, sent through identity channels
/// with exact inverse channel codecs.
pub fn lossless_transport(seed: u64) -> LosslessRun {
    let (k, l, d_c) = (3, 10, 3);
    let d_s = 2 * d_c;
    let mut rng = RngStream::new(seed, 0);
    let common: Vec<f64> = rng.gaussian(4 * d_s, 0.0, 1.0).into_data();
    let users: Vec<Tensor> = (0..k)
        .map(|_| {
            let mut data = common.clone();
            data.extend(rng.gaussian((l - 4) * d_s, 0.0, 1.0).into_data());
            Tensor::new([l, d_s], data).unwrap()
        })
        .collect();
    let z = MultiUserSemantics::new(users.clone()).unwrap();
    let p = partition(&z, 1e-9, PairMode::Consecutive).unwrap();
    let codec = ChanCodecParams::identity(d_s, d_c);
    let ch = identity_channel();
    let mut counter = SymbolCounter::default();
    let out = transport(&p, &vec![codec.clone(); k], &codec, &ch, &ch, &mut rng, &mut counter).unwrap();
    let max_err = users
        .iter()
        .zip(&out)
        .flat_map(|(a, b)| a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()))
        .fold(0.0, f64::max);
    LosslessRun {
        max_err,
        l_pub: p.l_pub(),
        l_pri: p.l_pri(),
        counter,
    }
}
