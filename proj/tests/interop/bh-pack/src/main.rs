// Packs a host directory with the backhand library: an independent writer
// whose images carry fragments and deduplicated data.
use std::fs::{self, File};
use std::io::BufWriter;
use std::os::unix::fs::MetadataExt;
use std::path::Path;

use backhand::compression::Compressor;
use backhand::{FilesystemCompressor, FilesystemWriter, NodeHeader};
use walkdir::WalkDir;

fn header(md: &fs::Metadata) -> NodeHeader {
    NodeHeader::new((md.mode() & 0o7777) as u16, md.uid(), md.gid(), md.mtime() as u32)
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        eprintln!("usage: bh-pack SRC OUT [gzip|zstd] [BLOCK_SIZE]");
        std::process::exit(1);
    }
    let src = Path::new(&args[1]);
    let codec = match args.get(3).map(String::as_str) {
        Some("zstd") => Compressor::Zstd,
        _ => Compressor::Gzip,
    };
    let mut w = FilesystemWriter::default();
    w.set_compressor(FilesystemCompressor::new(codec, None).unwrap());
    if let Some(bs) = args.get(4) {
        w.set_block_size(bs.parse().unwrap());
    }
    let root_md = fs::symlink_metadata(src).unwrap();
    w.set_root_mode((root_md.mode() & 0o7777) as u16);
    w.set_root_uid(root_md.uid());
    w.set_root_gid(root_md.gid());
    w.set_time(root_md.mtime() as u32);
    for entry in WalkDir::new(src).min_depth(1).sort_by_file_name() {
        let entry = entry.unwrap();
        let rel = Path::new("/").join(entry.path().strip_prefix(src).unwrap());
        let md = fs::symlink_metadata(entry.path()).unwrap();
        let ft = md.file_type();
        if ft.is_dir() {
            w.push_dir(&rel, header(&md)).unwrap();
        } else if ft.is_symlink() {
            let target = fs::read_link(entry.path()).unwrap();
            w.push_symlink(target, &rel, header(&md)).unwrap();
        } else {
            w.push_file_from_path(entry.path(), &rel, header(&md)).unwrap();
        }
    }
    let out = BufWriter::new(File::create(&args[2]).unwrap());
    w.write(out).unwrap();
}
