use std::io::prelude::*;

use fatfs::{FileSystem, FormatVolumeOptions, FsOptions};

fn main() -> std::io::Result<()> {
    let path = std::env::args().nth(1).expect("usage: mkfixture <image-path>");
    let file = std::fs::OpenOptions::new()
        .read(true)
        .write(true)
        .create(true)
        .truncate(true)
        .open(&path)?;
    file.set_len(64 * 1024 * 1024)?;

    let mut disk = fscommon::BufStream::new(file);
    fatfs::format_volume(
        &mut disk,
        FormatVolumeOptions::new()
            .fat_type(fatfs::FatType::Fat32)
            .volume_id(0x2026_0816)
            .volume_label(*b"INTEROPFIX "),
    )?;

    let fs = FileSystem::new(disk, FsOptions::new())?;
    {
        let root = fs.root_dir();

        let mut hello = root.create_file("hello.txt")?;
        hello.write_all(b"hello from an independent fat32 implementation\n")?;

        // long name forces LFN entries; content spans multiple clusters
        let mut big = root.create_file("Interop Fixture Payload.bin")?;
        let block: Vec<u8> = (0u32..65536).map(|i| (i * 31 + 7) as u8).collect();
        big.write_all(&block)?;

        let sub = root.create_dir("docs")?;
        let mut readme = sub.create_file("readme.txt")?;
        readme.write_all(b"planted by the rust fatfs crate, v0.3.6\n")?;
    }
    fs.unmount()?;
    println!("wrote {}", path);
    Ok(())
}
