// Scratch: correlation vs MI for specific competitor pairs across seeds.
use gattf::mi::MiMatrix;
use gattf::synthgen::{generate, SynthNetworkSpec};
use gattf::timeseries::SensorId;

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut num, mut va, mut vb) = (0.0, 0.0, 0.0);
    for i in 0..a.len() {
        num += (a[i] - ma) * (b[i] - mb);
        va += (a[i] - ma).powi(2);
        vb += (b[i] - mb).powi(2);
    }
    num / (va.sqrt() * vb.sqrt())
}

fn main() {
    let sid = |s: &str| SensorId::new(s).unwrap();
    println!("seed | B4-B2 B4-B3 B4-B1 (corr) | same (MI) | var B1 B2 B3 B4");
    for seed in 0..8u64 {
        let ds = generate(&SynthNetworkSpec::motorway_template(seed)).unwrap();
        let train = ds.prefix(4896).unwrap();
        let m = MiMatrix::compute(&train).unwrap();
        let v = |s: &str| train.get(&sid(s)).unwrap().values.clone();
        let (b1, b2, b3, b4) = (v("B1"), v("B2"), v("B3"), v("B4"));
        let var = |x: &[f64]| {
            let mu = x.iter().sum::<f64>() / x.len() as f64;
            x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / x.len() as f64
        };
        println!(
            "{seed} | {:.3} {:.3} {:.3} | {:.3} {:.3} {:.3} | {:.0} {:.0} {:.0} {:.0}",
            corr(&b4, &b2),
            corr(&b4, &b3),
            corr(&b4, &b1),
            m.get(&sid("B4"), &sid("B2")).unwrap(),
            m.get(&sid("B4"), &sid("B3")).unwrap(),
            m.get(&sid("B4"), &sid("B1")).unwrap(),
            var(&b1) / 1000.0,
            var(&b2) / 1000.0,
            var(&b3) / 1000.0,
            var(&b4) / 1000.0,
        );
    }
}
