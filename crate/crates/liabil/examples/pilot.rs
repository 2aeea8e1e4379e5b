// Temporary development pilot; removed before delivery.
use liabil::sim::{run_replication_study, Estimand, EstimatorArm, ReplicationOptions, SimConfig, CovariateScenario};

fn main() {
    let t0 = std::time::Instant::now();
    let config = SimConfig { n_mz: 2000, n_dz: 2000, seed: 20260810, ..SimConfig::default() };
    let opts = ReplicationOptions { n_reps: 200, ..Default::default() };
    let s = run_replication_study(&config, &opts).unwrap();
    println!("== baseline 200 reps in {:.1}s; failures {:?}", t0.elapsed().as_secs_f64(), s.failures);
    for r in &s.rows {
        if matches!(r.arm, EstimatorArm::Weibull1 | EstimatorArm::Weibull2 | EstimatorArm::Km) {
            println!("{:9} {:15} true {:.4} av {:.4} diff {:+.4} cv {:.3}", r.arm.label(), r.estimand.label(), r.truth, r.mean, r.mean - r.truth, r.coverage);
        }
    }
    let naive_f1 = s.row(EstimatorArm::Naive, Estimand::F1).unwrap();
    println!("naive f1 av {:.4} cv {:.3}", naive_f1.mean, naive_f1.coverage);
    let t1 = std::time::Instant::now();
    let config2 = SimConfig { n_mz: 2000, n_dz: 2000, seed: 20260811, covariate: Some(CovariateScenario::default()), ..SimConfig::default() };
    let opts2 = ReplicationOptions { n_reps: 200, estimators: vec![EstimatorArm::Naive, EstimatorArm::Weibull2], ..Default::default() };
    let s2 = run_replication_study(&config2, &opts2).unwrap();
    println!("== covariate 200 reps in {:.1}s; failures {:?}", t1.elapsed().as_secs_f64(), s2.failures);
    for r in &s2.rows {
        if matches!(r.estimand, Estimand::RhoMz | Estimand::RhoDz | Estimand::LambdaMz | Estimand::F1 | Estimand::SigmaA2) {
            println!("{:9} {:15} true {:.4} av {:.4} cv {:.3}", r.arm.label(), r.estimand.label(), r.truth, r.mean, r.coverage);
        }
    }
    let nl = s2.row(EstimatorArm::Naive, Estimand::LambdaMz).unwrap();
    println!("naive lambda ratio vs true: {:.3}", nl.mean / nl.truth);
}
