use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use templex::extract::extract_document;
use templex::harness::{generate, random_spec, Shape};
use templex::model::DocumentStream;
use templex_ffi::*;

fn jsonl(doc: &DocumentStream) -> String {
    let mut buf = Vec::new();
    doc.write_jsonl(&mut buf).unwrap();
    String::from_utf8(buf).unwrap()
}

fn last_error() -> String {
    let p = tx_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take_string(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    tx_string_free(p);
    s
}

fn sample() -> DocumentStream {
    let spec = random_spec(Shape::Medium, 4, 6);
    generate(&spec).unwrap().remove(0).stream
}

#[test]
fn infer_and_extract_through_the_c_abi() {
    let doc = sample();
    let id = CString::new("doc").unwrap();
    let text = CString::new(jsonl(&doc)).unwrap();
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(tx_document_from_jsonl(id.as_ptr(), text.as_ptr(), &mut d), TxStatus::Ok);
        let docs = [d as *const TxDocument];
        let mut t = ptr::null_mut();
        assert_eq!(tx_infer_template(docs.as_ptr(), 1, ptr::null(), &mut t), TxStatus::Ok);

        let mut json = ptr::null_mut();
        assert_eq!(tx_template_to_json(t, &mut json), TxStatus::Ok);
        let template_json = take_string(json);
        let template = templex::template::Template::from_json(&template_json).unwrap();

        // round trip through JSON gives an equivalent handle
        let tj = CString::new(template_json).unwrap();
        let mut t2 = ptr::null_mut();
        assert_eq!(tx_template_from_json(tj.as_ptr(), &mut t2), TxStatus::Ok);

        let mut ex = ptr::null_mut();
        assert_eq!(tx_extract(d, t2, &mut ex), TxStatus::Ok);
        let mut json = ptr::null_mut();
        assert_eq!(tx_extraction_to_json(ex, &mut json), TxStatus::Ok);
        let got = take_string(json);
        let want = extract_document(&doc, &template).unwrap().to_json().unwrap();
        assert_eq!(got, want);
        assert!(tx_last_error_message().is_null());

        tx_extraction_free(ex);
        tx_template_free(t);
        tx_template_free(t2);
        tx_document_free(d);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut d = ptr::null_mut();
        let id = CString::new("bad").unwrap();
        let text = CString::new("{\"text\":\"A\",\"index\":1,\"page\":1,\"bbox\":[5,0,1,10]}\n").unwrap();
        assert_eq!(tx_document_from_jsonl(id.as_ptr(), text.as_ptr(), &mut d), TxStatus::Parse);
        assert!(last_error().starts_with("line 1:"));
        assert!(d.is_null());

        assert_eq!(tx_document_from_jsonl(ptr::null(), text.as_ptr(), &mut d), TxStatus::InvalidArgument);
        assert_eq!(last_error(), "source_id is null");

        let mut t = ptr::null_mut();
        let bad = CString::new(r#"{"root":[0],"nodes":[]}"#).unwrap();
        assert_eq!(tx_template_from_json(bad.as_ptr(), &mut t), TxStatus::Parse);
        assert!(last_error().contains("invalid template"));

        assert_eq!(tx_infer_template(ptr::null(), 0, ptr::null(), &mut t), TxStatus::InvalidArgument);

        let doc = sample();
        let text = CString::new(jsonl(&doc)).unwrap();
        assert_eq!(tx_document_from_jsonl(id.as_ptr(), text.as_ptr(), &mut d), TxStatus::Ok);
        let docs = [d as *const TxDocument];
        let cfg = CString::new(r#"{"budget_ms": 0}"#).unwrap();
        assert_eq!(tx_infer_template(docs.as_ptr(), 1, cfg.as_ptr(), &mut t), TxStatus::InvalidArgument);
        tx_document_free(d);

        // freeing null is a no-op
        tx_document_free(ptr::null_mut());
        tx_template_free(ptr::null_mut());
        tx_extraction_free(ptr::null_mut());
        tx_string_free(ptr::null_mut());
    }
}

#[test]
fn no_structure_is_a_pipeline_error() {
    // a lone metadata line repeated on two pages
    let text = "{\"text\":\"Header 1\",\"index\":1,\"page\":1,\"bbox\":[36,36,300,46]}\n\
                {\"text\":\"Header 2\",\"index\":2,\"page\":2,\"bbox\":[36,36,300,46]}\n";
    let id = CString::new("m").unwrap();
    let text = CString::new(text).unwrap();
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(tx_document_from_jsonl(id.as_ptr(), text.as_ptr(), &mut d), TxStatus::Ok);
        let docs = [d as *const TxDocument];
        let mut t = ptr::null_mut();
        assert_eq!(tx_infer_template(docs.as_ptr(), 1, ptr::null(), &mut t), TxStatus::Pipeline);
        assert!(t.is_null());
        tx_document_free(d);
    }
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(tx_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = target_dir().join("libtemplex_ffi.a");
    assert!(lib.exists(), "missing {}", lib.display());
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(manifest.join("tests/c/smoke.c"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("a C compiler on PATH");
    assert!(status.success());

    let doc = sample();
    let input = tmp.path().join("doc.jsonl");
    std::fs::write(&input, jsonl(&doc)).unwrap();
    let out = Command::new(&exe).arg(&input).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let template = {
        let corpus = DocumentStream::concat("corpus", [&doc]);
        let cfg = templex::pipeline::PipelineConfig::default();
        templex::pipeline::infer(&corpus, &templex::oracle::HeuristicOracle, &cfg).unwrap().template
    };
    let want = extract_document(&doc, &template).unwrap().to_json().unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), want);
}
