use aghq::mcmc::{convergence_report, run_chains};
use aghq::model::LogJointModel;
use aghq::models::{MiniElgmConfig, MiniElgmModel};
use aghq::pipeline::{run_fit, FitOptions, Method, RankChoice};

fn main() {
    let model = MiniElgmModel::from_config(&MiniElgmConfig::default()).unwrap();
    let n_latent = model.space().latent_dim();

    let pca = run_fit(&model, Method::PcaAghq { k: 3, rank: RankChoice::Threshold(0.9) }, &FitOptions::default()).unwrap();
    let (pca_mean, pca_sd) = pca.mixture.as_ref().unwrap().latent_moments();
    println!("pca s={:?} nodes={}", pca.selection.map(|s| s.s), pca.quad.grid.len());

    let eb = run_fit(&model, Method::Eb, &FitOptions::default()).unwrap();
    let (_, eb_sd) = eb.mixture.as_ref().unwrap().latent_moments();

    let chains = run_chains(&model, 4, 50_000, 42).unwrap();
    let report = convergence_report(&chains);
    println!("rhat_max {:?} ess_min {:.0}", report.rhat_max, report.ess_min);
    let pooled = chains.pooled();
    let n = pooled.nrows() as f64;

    let mut worst_z = 0.0f64;
    let mut worst_name = String::new();
    let mut sq_pca = 0.0; let mut sq_eb = 0.0;
    for i in 0..n_latent {
        let mean: f64 = pooled.column(i).iter().sum::<f64>() / n;
        let var: f64 = pooled.column(i).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        let sd = var.sqrt();
        let mcse = sd / report.ess[i].sqrt();
        let z = (pca_mean[i] - mean).abs() / mcse;
        if z > worst_z { worst_z = z; worst_name = report.names[i].clone(); }
        sq_pca += (pca_sd[i] - sd) * (pca_sd[i] - sd);
        sq_eb += (eb_sd[i] - sd) * (eb_sd[i] - sd);
    }
    let rmse_pca = (sq_pca / n_latent as f64).sqrt();
    let rmse_eb = (sq_eb / n_latent as f64).sqrt();
    println!("worst mean z-score: {worst_z:.2} at {worst_name} (gate 3.0)");
    println!("sd-RMSE pca {rmse_pca:.5} vs eb {rmse_eb:.5}  (pca <= eb: {})", rmse_pca <= rmse_eb);
}
