//! Build an embedding store, write it with its manifest sidecar, read it back
//! and pair it with a constraint file.

use semshift::{ConstraintSet, EmbeddingStore, ManifestRow};

fn main() -> semshift::Result<()> {
    let mut store = EmbeddingStore::new(3);
    store.push(ManifestRow::new("bank-1", "bank", "1850", "s1"), &[0.9, 0.1, 0.0])?;
    store.push(ManifestRow::new("bank-2", "bank", "1850", "s2"), &[0.8, 0.2, 0.1])?;
    store.push(ManifestRow::new("bank-3", "bank", "1990", "s3"), &[0.1, 0.9, 0.3])?;

    let dir = std::env::temp_dir().join("semshift-store-io");
    std::fs::create_dir_all(&dir).map_err(|e| semshift::Error::Input(e.to_string()))?;
    let path = dir.join("store.bin");
    store.write(&path)?;
    println!("wrote {} ({} bytes)", path.display(), std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0));
    print!("{}", std::fs::read_to_string(EmbeddingStore::manifest_path(&path)).unwrap_or_default());

    let back = EmbeddingStore::read(&path)?;
    assert_eq!(back, store);
    println!("read back {} rows of dim {}", back.len(), back.dim());

    let pairs = ConstraintSet::parse("bank-1\tbank-2\t1\nbank-1\tbank-3\t0\n", &back)?;
    let (same, different) = pairs.label_counts();
    println!("constraints: {same} same, {different} different");
    Ok(())
}
