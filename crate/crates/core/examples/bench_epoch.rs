use fbid_core::refdyn::{generate_excitation, random_model, ExcitationSpec};
use fbid_core::topology::RobotTopology;
use fbid_core::training::{train, Control, Method, Serial, TrainConfig};
use std::time::Instant;

fn main() {
    let method = Method::parse(&std::env::args().nth(1).unwrap_or("felan".into())).unwrap();
    let epochs: usize = std::env::args().nth(2).map_or(3, |s| s.parse().unwrap());
    let lr: f64 = std::env::args().nth(3).map_or(5e-4, |s| s.parse().unwrap());
    let topo = RobotTopology::chains(&[2, 2]).unwrap();
    let model = random_model(&topo, 7);
    let spec = ExcitationSpec { duration: 200.0, rate: 100.0, seed: 7, ..ExcitationSpec::default() };
    let t = Instant::now();
    let data = generate_excitation(&model, &spec).unwrap();
    eprintln!("data {} rows in {:?}; mass {}", data.len(), t.elapsed(), model.total_mass());
    let prior = fbid_core::training::mass_from_vertical_force(&data, model.gravity());
    eprintln!("prior {prior:?}");
    let cfg = TrainConfig { epochs, mass_prior: prior, learning_rate: lr, target_nmse: Some(0.1), ..TrainConfig::new(method) };
    let t = Instant::now();
    let out = train(&data, &topo, Some(&model), &cfg, &Serial, |m, _| {
        eprintln!("{:4} train {:.4} test {:.4} loss {:.4} m {:?} mhat {:?} beta {:?} g {:.1} t {:?}", m.epoch, m.train_nmse, m.test_nmse, m.loss, m.mass, m.m_hat, m.beta_mean, m.max_grad_norm, t.elapsed());
        Control::Continue
    })
    .unwrap();
    eprintln!("done {:?} best {}", t.elapsed(), out.best_epoch);
}
