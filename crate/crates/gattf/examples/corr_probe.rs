// Scratch: raw Pearson correlation vs MI for a few planted pairs.
use gattf::mi::{binning_for, discretize, mutual_information};
use gattf::synthgen::{generate, SynthNetworkSpec};
use gattf::timeseries::SensorId;

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for i in 0..a.len() {
        num += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma).powi(2);
        vb += (b[i] - mb).powi(2);
    }
    num / (va.sqrt() * vb.sqrt())
}

fn main() {
    let spec = SynthNetworkSpec::motorway_template(0);
    let ds = generate(&spec).unwrap();
    let get = |s: &str| ds.get(&SensorId::new(s).unwrap()).unwrap();
    for (x, y, lag) in [
        ("A1", "A2", 2usize),
        ("A3", "A4", 3),
        ("C2", "C3", 2),
        ("A1", "B1", 0),
        ("A1", "A2", 0),
        ("A3", "A4", 0),
    ] {
        let sx = get(x);
        let sy = get(y);
        let a: Vec<f64> = sx.values[..sx.len() - lag].to_vec();
        let b: Vec<f64> = sy.values[lag..].to_vec();
        let bx = binning_for(&a).unwrap();
        let by = binning_for(&b).unwrap();
        println!(
            "{x}->{y} lag {lag}: corr {:.3}, kx {} ky {}, mi {:.4}",
            corr(&a, &b),
            bx.bins,
            by.bins,
            {
                let dxa = a
                    .iter()
                    .map(|&v| {
                        if bx.bins == 1 { 0 } else {
                            (((v - bx.min) / bx.width).floor().max(0.0) as usize).min(bx.bins - 1)
                        }
                    })
                    .collect::<Vec<_>>();
                let dyb = b
                    .iter()
                    .map(|&v| {
                        if by.bins == 1 { 0 } else {
                            (((v - by.min) / by.width).floor().max(0.0) as usize).min(by.bins - 1)
                        }
                    })
                    .collect::<Vec<_>>();
                mutual_information(&dxa, &dyb, bx.bins, by.bins).unwrap()
            }
        );
    }
    let _ = discretize; // silence unused import if signatures change
}
