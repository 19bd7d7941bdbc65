//! Download and digest check of the CIFAR-10 binary archive.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use iwshift_core::{Error, Result};
use md5::{Digest, Md5};

pub const ARCHIVE_URL: &str = "https://www.cs.toronto.edu/~kriz/cifar-10-binary.tar.gz";
/// Published MD5 of `cifar-10-binary.tar.gz`.
pub const ARCHIVE_MD5: &str = "c32a1d4ab5d03f1284b67883e8d87530";
pub const ARCHIVE_NAME: &str = "cifar-10-binary.tar.gz";

pub fn md5_hex(bytes: &[u8]) -> String {
    Md5::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Checks the digest, then unpacks the gzipped tarball under `dir`.
pub fn verify_and_extract(archive: &[u8], expected_md5: &str, dir: &Path) -> Result<()> {
    let got = md5_hex(archive);
    if got != expected_md5 {
        return Err(Error::Format {
            offset: 0,
            reason: format!("archive md5 {got} does not match the published {expected_md5}"),
        });
    }
    std::fs::create_dir_all(dir)?;
    tar::Archive::new(GzDecoder::new(archive)).unpack(dir)?;
    Ok(())
}

/// Downloads the archive (or reads `local` if given), verifies it and
/// extracts it under `dir`. Returns the batch directory.
pub fn fetch_cifar(dir: &Path, local: Option<&Path>) -> Result<PathBuf> {
    let bytes = match local {
        Some(p) => std::fs::read(p)?,
        None => download(ARCHIVE_URL)?,
    };
    if local.is_none() {
        std::fs::create_dir_all(dir)?;
        File::create(dir.join(ARCHIVE_NAME))?.write_all(&bytes)?;
    }
    verify_and_extract(&bytes, ARCHIVE_MD5, dir)?;
    Ok(dir.join("cifar-10-batches-bin"))
}

fn download(url: &str) -> Result<Vec<u8>> {
    let response = ureq::get(url)
        .call()
        .map_err(|e| Error::Io(std::io::Error::other(format!("GET {url}: {e}"))))?;
    let mut bytes = Vec::new();
    response.into_body().into_reader().read_to_end(&mut bytes)?;
    Ok(bytes)
}
