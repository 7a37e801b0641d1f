use anyhow::Result;
use msgrpo::env::{frozenlake_generate, LakeMap, Variant, DEFAULT_HOLE_PROB, LAKE_SIZE};
use msgrpo::eval::{value_iteration, DEFAULT_TOLERANCE};

use crate::UsageError;

#[derive(Debug, clap::Args)]
pub struct OracleArgs {
    /// Seed of the generated map.
    #[arg(long, default_value_t = 0)]
    pub map_seed: u64,
    #[arg(long, default_value_t = DEFAULT_HOLE_PROB)]
    pub hole_prob: f64,
    /// Use this map (rows separated by `/`) instead of generating one.
    #[arg(long, conflicts_with_all = ["map_seed", "hole_prob"])]
    pub map: Option<String>,
    /// Solve only this Frozen Lake variant; both by default.
    #[arg(long)]
    pub variant: Option<Variant>,
}

pub fn run(args: OracleArgs) -> Result<()> {
    let variants = match args.variant {
        Some(v) if !v.is_lake() => {
            return Err(UsageError(format!("{v} has no value-iteration oracle")).into())
        }
        Some(v) => vec![v],
        None => vec![Variant::FrozenlakeNotSlippery, Variant::FrozenlakeSlippery],
    };
    let map = match &args.map {
        Some(text) => LakeMap::from_text(text).map_err(|e| UsageError(format!("--map: {e}")))?,
        None => {
            if !(0.0..1.0).contains(&args.hole_prob) {
                return Err(UsageError(format!(
                    "--hole-prob must be in [0, 1), got {}",
                    args.hole_prob
                ))
                .into());
            }
            println!("map seed {} hole_prob {}", args.map_seed, args.hole_prob);
            frozenlake_generate(args.map_seed, LAKE_SIZE, args.hole_prob)
        }
    };
    print!("{}", map.to_text());
    for v in variants {
        let t = value_iteration(&map, v == Variant::FrozenlakeSlippery, DEFAULT_TOLERANCE);
        println!("\n{v}: values ({} sweeps)", t.residuals.len());
        print!("{}", t.values_text());
        println!("{v}: greedy actions");
        print!("{}", t.arrows_text(&map));
    }
    Ok(())
}
