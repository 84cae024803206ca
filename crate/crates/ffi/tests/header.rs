use std::path::Path;
use std::process::Command;

fn header() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mvassoc.h"))
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for name in [
        "mvassoc_last_error",
        "mvassoc_dataset_generate",
        "mvassoc_dataset_read",
        "mvassoc_dataset_write",
        "mvassoc_dataset_shape",
        "mvassoc_dataset_view_len",
        "mvassoc_dataset_free",
        "mvassoc_train",
        "mvassoc_model_read",
        "mvassoc_model_write",
        "mvassoc_model_free",
        "mvassoc_associate_frame",
        "mvassoc_evaluate",
        "typedef struct MvDataset MvDataset",
        "typedef struct MvModel MvModel",
        "MV_STATUS_IO = 6",
    ] {
        assert!(text.contains(name), "header lacks {name}");
    }
}

#[test]
fn header_compiles_as_c_and_cpp() {
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(out) = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(header())
            .output()
        else {
            eprintln!("{compiler} not found; skipping");
            continue;
        };
        assert!(
            out.status.success(),
            "{compiler}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
}
