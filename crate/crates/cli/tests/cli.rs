use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;

const CONTACTS: &str = "Add a contacts whose name is Xu, set the working phone number to be 12345678 and mobile phone number to be 87654321";

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_anonproxy"));
    c.env_remove("ANONPROXY_CONFIG").env_remove("ANONPROXY_BIND").env_remove("ANONPROXY_NER_ADDR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn scenario(name: &str) -> String {
    root().join(format!("fixtures/scenarios/{name}.json")).to_string_lossy().into_owned()
}

fn sample_config() -> String {
    root().join("fixtures/config/anonproxy.toml").to_string_lossy().into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn anonymize_instruction_with_config() {
    let dir = tempfile::tempdir().unwrap();
    let instr = write(dir.path(), "contacts.txt", &format!("{CONTACTS}\n"));
    let out = run(&["anonymize", "--config", &sample_config(), "--instruction", &instr]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        stdout(&out),
        "Add a contacts whose name is LAST_NAME#4v71x, set the working phone number to be PHONE_NUMBER#1lryd and mobile phone number to be PHONE_NUMBER#2f28e\n"
    );
}

#[test]
fn anonymize_clean_xml_is_unchanged() {
    let dir = tempfile::tempdir().unwrap();
    let xml = r#"<hierarchy rotation="0"><node index="0" text="Settings" class="android.widget.TextView" bounds="[0,0][1080,200]"/><node index="1" text="Next" class="android.widget.Button" clickable="true" bounds="[40,1880][1040,1990]"/></hierarchy>"#;
    let path = write(dir.path(), "clean.xml", xml);
    let out_path = dir.path().join("out.json");
    let out = run(&["anonymize", "--xml", &path, "--out", out_path.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let v: Value = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert_eq!(v["virtual_ui"]["anonymized_xml"].as_str().unwrap().trim_end(), xml);
    assert_eq!(v["virtual_ui"]["mask_plan"].as_array().unwrap().len(), 0);
    assert_eq!(v["virtual_ui"]["elements"].as_array().unwrap().len(), 1);
}

#[test]
fn anonymize_screenshot() {
    let dir = tempfile::tempdir().unwrap();
    let ocr = write(dir.path(), "ocr.json", r#"[{"text": "13912345670", "bbox": [10, 10, 190, 40]}]"#);
    let png = dir.path().join("shot.png");
    image::RgbImage::from_pixel(200, 60, image::Rgb([255, 255, 255])).save(&png).unwrap();
    let masked = dir.path().join("masked.png");
    let out = run(&[
        "anonymize",
        "--ocr",
        &ocr,
        "--screenshot",
        png.to_str().unwrap(),
        "--png-out",
        masked.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!stdout(&out).contains("13912345670"));
    let img = image::open(&masked).unwrap().to_rgb8();
    assert_ne!(img.get_pixel(11, 11), &image::Rgb([255, 255, 255]));

    let out = run(&["anonymize", "--screenshot", png.to_str().unwrap()]);
    assert_eq!(code(&out), 5, "usage error");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let instr = write(dir.path(), "i.txt", CONTACTS);
    assert_eq!(code(&run(&["anonymize", "--instruction", "/no/such/file"])), 3);

    let bad = write(dir.path(), "bad.toml", "[session]\nlabels = []\n");
    assert_eq!(code(&run(&["anonymize", "--config", &bad, "--instruction", &instr])), 4);
    let remote = write(dir.path(), "remote.toml", "[service]\nbind = \"0.0.0.0:9\"\n");
    assert_eq!(code(&run(&["serve", "--config", &remote])), 4);

    let xml = write(dir.path(), "bad.xml", "<hierarchy><node");
    assert_eq!(code(&run(&["anonymize", "--xml", &xml])), 5);

    // nothing listens on a port we just released
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let tcp = write(dir.path(), "tcp.toml", &format!("[adapter]\nkind = \"tcp\"\naddr = \"127.0.0.1:{port}\"\n"));
    let out = run(&["anonymize", "--config", &tcp, "--instruction", &instr]);
    assert_eq!(code(&out), 2);
    assert!(stdout(&out).is_empty());
}

#[test]
fn run_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("r.json");
    let out = run(&["run", "--scenario", &scenario("message_consistent"), "--oracle-detector", "--report", report.to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r[0]["violations"].as_array().unwrap().len(), 0);
    assert_eq!(r[0]["LR"], 0.0);
    assert!(stdout(&out).contains("message_consistent"));

    let out = run(&["run", "--scenario", &scenario("planted_leak"), "--report", report.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert!(r[0]["LR"].as_f64().unwrap() > 0.0);

    let cfg = write(dir.path(), "s.json", r#"{"final_scan": true}"#);
    let out = run(&["run", "--scenario", &scenario("planted_leak"), "--session-config", &cfg]);
    assert_eq!(code(&out), 6);
    assert!(String::from_utf8_lossy(&out.stderr).contains("at step 0"));

    assert_eq!(code(&run(&["run", "--scenario", "/no/such.json"])), 3);
    let junk = write(dir.path(), "junk.json", r#"{"schema_version": 1}"#);
    assert_eq!(code(&run(&["run", "--scenario", &junk])), 5);
}

#[test]
fn bench_reports_positive_latencies() {
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("bench.json");
    let out = run(&["bench", "--corpus", &root().join("fixtures").to_string_lossy(), "--report", report.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&std::fs::read(&report).unwrap()).unwrap();
    assert_eq!(r["scenarios"], 4);
    for s in r["stages"].as_array().unwrap() {
        assert!(s["mean_ms"].as_f64().unwrap() > 0.0, "{s}");
    }
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(code(&run(&["bench", "--corpus", empty.path().to_str().unwrap()])), 8);
}

#[test]
fn serve_prints_port_and_answers() {
    let mut child = bin()
        .args(["serve", "--bind", "127.0.0.1:0"])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap()).read_line(&mut line).unwrap();
    let addr = line.trim().strip_prefix("listening on http://").unwrap().to_string();
    assert_ne!(addr, "127.0.0.1:0");

    let mut s = TcpStream::connect(&addr).unwrap();
    s.write_all(b"POST /v1/sessions HTTP/1.1\r\nHost: x\r\nContent-Length: 2\r\nConnection: close\r\n\r\n{}").unwrap();
    let mut buf = String::new();
    s.read_to_string(&mut buf).unwrap();
    assert!(buf.starts_with("HTTP/1.1 201"), "{buf}");

    let busy = run(&["serve", "--bind", &addr]);
    assert_eq!(code(&busy), 7);
    child.kill().unwrap();
    child.wait().unwrap();
}

#[test]
fn run_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let mut reports = Vec::new();
    for k in 0..2 {
        let p = dir.path().join(format!("{k}.json"));
        let out = run(&["run", "--scenario", &scenario("contacts_form"), "--scenario", &scenario("message_missed"), "--report", p.to_str().unwrap()]);
        assert_eq!(code(&out), 1);
        let mut v: Value = serde_json::from_slice(&std::fs::read(&p).unwrap()).unwrap();
        for r in v.as_array_mut().unwrap() {
            r["wall_time_ms"] = Value::Null;
        }
        reports.push(v);
    }
    assert_eq!(reports[0], reports[1]);
}
