//! Regenerates the shipped mini ELGM fixture files. Run from the crate root:
//! `cargo run -p aghq --example gen_fixtures`

use aghq::models::mini_elgm_fixture as fixture;

fn main() -> std::io::Result<()> {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    std::fs::write(dir.join("mini_elgm_data.csv"), fixture::data_csv(fixture::SEED))?;
    std::fs::write(dir.join("mini_elgm_adjacency.csv"), fixture::adjacency_csv())?;
    println!("fixtures written to {}", dir.display());
    Ok(())
}
