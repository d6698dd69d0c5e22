//! Writes a generated scenario to JSON, reads it back and shows how invalid
//! documents are reported.

use hier_admm::scenario::{from_json, generate, load, save, GeneratorParams};

fn main() -> hier_admm::Result<()> {
    let params = GeneratorParams {
        seed: 3,
        levels: 3,
        horizon: 24,
        dt: 1.0,
        max_leaves_per_branch: 3,
        ..GeneratorParams::default()
    };
    let scenario = generate(&params)?;
    let dir = std::env::temp_dir().join("hier-admm-scenario-example");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("scenario.json");
    save(&scenario, &path)?;
    let back = load(&path)?;
    println!("wrote and reread {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    println!("round trip equal: {}", back == scenario);

    let broken = std::fs::read_to_string(&path)?.replacen("\"capacity_kwh\"", "\"capacity\"", 1);
    match from_json(&broken) {
        Err(e) => println!("renamed field: {e}"),
        Ok(_) => println!("renamed field unexpectedly accepted"),
    }
    Ok(())
}
