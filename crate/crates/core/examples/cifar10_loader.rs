//! Load CIFAR-10 from the binary batch files.
//!
//! Reads `$GRIDNET_DATA/cifar-10-batches-bin` when present; otherwise writes a
//! tiny fake set of batch files to a temporary directory and reads that.

use gridnet::data::{cifar_root, load_cifar10, write_cifar_file, CifarRecord, CIFAR_FILES, CIFAR_PIXELS};

fn main() -> gridnet::Result<()> {
    let mut dir = cifar_root(None);
    if !dir.join(CIFAR_FILES[0]).exists() {
        dir = std::env::temp_dir().join("gridnet-fake-cifar");
        std::fs::create_dir_all(&dir).map_err(|e| gridnet::Error::Io { path: dir.clone(), source: e })?;
        for (f, name) in CIFAR_FILES.iter().enumerate() {
            let records: Vec<CifarRecord> = (0..20)
                .map(|i| CifarRecord {
                    label: ((i + f) % 10) as u8,
                    pixels: Box::new([(i * 12) as u8; CIFAR_PIXELS]),
                })
                .collect();
            write_cifar_file(&dir.join(name), &records)?;
        }
        println!("no CIFAR-10 found; using fake batches in {}", dir.display());
    }

    let (train, val) = load_cifar10::<f32>(&dir, Some(1000))?;
    println!("train {} images, val {}, shape {:?}", train.len(), val.len(), train.sample_shape());
    println!("train class counts {:?}", train.class_counts());
    Ok(())
}
