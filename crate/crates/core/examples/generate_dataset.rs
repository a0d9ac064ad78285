//! Write one DGP1 or DGP2 draw to CSV and print the matching `--schema` JSON.
//!
//! cargo run -p jive-infer-core --example generate_dataset -- dgp1 7 data.csv

use jive_infer::dataio::save_dataset;
use jive_infer::simulation::{gen_dgp1, gen_dgp2, Dgp1Spec, Dgp2Spec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let design = args.next().unwrap_or_else(|| "dgp1".into());
    let seed: u64 = args.next().map_or(Ok(1), |s| s.parse())?;
    let path = args.next().unwrap_or_else(|| "data.csv".into());
    let ds = match design.as_str() {
        "dgp1" => gen_dgp1(&Dgp1Spec::default(), seed)?,
        "dgp2" => gen_dgp2(&Dgp2Spec::default(), seed)?,
        other => return Err(format!("unknown design {other}").into()),
    };
    let roles = save_dataset(&path, &ds)?;
    println!("{}", serde_json::to_string(&roles)?);
    Ok(())
}
