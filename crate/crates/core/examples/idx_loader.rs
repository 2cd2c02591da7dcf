//! Reads an IDX image/label pair. Without arguments it writes a tiny pair to a
//! temporary directory first.
//!
//! cargo run --example idx_loader [images labels]

use std::path::PathBuf;

use feddecorr::data::{load_idx, write_idx};

fn main() -> feddecorr::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let (images, labels) = if args.len() == 2 {
        (PathBuf::from(&args[0]), PathBuf::from(&args[1]))
    } else {
        let dir = std::env::temp_dir().join("feddecorr-idx-demo");
        std::fs::create_dir_all(&dir).map_err(|e| feddecorr::Error::Io {
            path: dir.clone(),
            source: e,
        })?;
        let imgs: Vec<Vec<u8>> = (0..6u8).map(|i| (0..16u8).map(|p| p * 16 + i).collect()).collect();
        let labs: Vec<u8> = (0..6).map(|i| i % 3).collect();
        let (ip, lp) = (dir.join("images.idx3"), dir.join("labels.idx1"));
        write_idx(&ip, &lp, &imgs, &labs, 4, 4)?;
        (ip, lp)
    };
    let ds = load_idx(&images, &labels)?;
    println!("{}: {} samples of dimension {}, {} classes", ds.name, ds.len(), ds.dim(), ds.classes);
    println!("class counts: {:?}", ds.class_counts());
    let first = ds.features.col(0);
    println!("first sample, first 8 pixels: {:?}", &first[..first.len().min(8)]);
    Ok(())
}
