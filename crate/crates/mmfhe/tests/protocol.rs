mod common;

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use mmfhe::dataset::{Dataset, Partition};
use mmfhe::experiment::train_party;
use mmfhe::net::{connect, listen, Endpoint};
use mmfhe::protocol::{cipher_from_token, cloud_key_to_token, encode_frame, word_from_wire, Message, SessionId};
use mmfhe::roles::{spawn_cloud, spawn_party, Network, SessionConfig, UserClient};
use mmfhe::Error;
use mmfhe_core::fuzzy::{local_classify, AttributeBank};
use mmfhe_core::gates::{decrypt_word, encode_unit_interval, BitBackend, PlainSimBackend};

struct Fixture {
    banks: Vec<Arc<AttributeBank>>,
    test: Dataset,
}

fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let data = common::synthetic(4, 80, 6, 31);
        let (train, test) = data.split(0.5, 2).unwrap();
        let parts = train.partition(&Partition::ClassRanges(vec![vec![0, 1], vec![2, 3]])).unwrap();
        let banks = parts.iter().map(|p| Arc::new(train_party(p, &common::small_config()).unwrap().bank)).collect();
        Fixture { banks, test }
    })
}

fn row(test: &Dataset, i: usize) -> Vec<f64> {
    test.x.row(i).iter().copied().collect()
}

/// Cloud plus one party per bank on fresh in-memory endpoints.
fn deploy(name: &str, banks: &[Arc<AttributeBank>], timeout: Duration) -> Network {
    let be = Arc::new(PlainSimBackend::default());
    let (cloud, _) = spawn_cloud(Arc::clone(&be), &Endpoint::Mem(format!("{name}-cloud")), timeout).unwrap();
    let parties = banks
        .iter()
        .enumerate()
        .map(|(k, b)| spawn_party(Arc::clone(&be), Arc::clone(b), &Endpoint::Mem(format!("{name}-p{k}")), &cloud, timeout).unwrap())
        .collect();
    Network { cloud, parties }
}

fn user(net: &Network, n_b: u32) -> UserClient<PlainSimBackend> {
    UserClient::connect(Arc::new(PlainSimBackend::default()), net, SessionConfig::new(n_b).unwrap(), 11).unwrap()
}

#[test]
fn single_party_returns_its_local_label() {
    let fx = fixture();
    let net = deploy("single", &fx.banks[..1], Duration::from_secs(30));
    let mut u = user(&net, 8);
    for i in 0..10 {
        let y = row(&fx.test, i);
        let out = u.query(&y).unwrap();
        assert_eq!(out.label, local_classify(&y, &fx.banks[0]).unwrap().label);
        assert_eq!(out.deltas, vec![true]);
        assert_eq!(out.gates.bootstraps, 0);
    }
}

#[test]
fn encrypted_label_matches_quantized_plaintext() {
    let fx = fixture();
    let net = deploy("two", &fx.banks, Duration::from_secs(30));
    for n_b in [8, 16] {
        let mut u = user(&net, n_b);
        let mut first_gates = None;
        for i in 0..fx.test.len().min(60) {
            let y = row(&fx.test, i);
            let out = u.query(&y).unwrap();
            let local: Vec<_> = fx.banks.iter().map(|b| local_classify(&y, b).unwrap()).collect();
            let q: Vec<u64> = local.iter().map(|s| encode_unit_interval(s.mu_bar, n_b).unwrap()).collect();
            let best = if q[1] < q[0] { 1 } else { 0 };
            assert_eq!(out.label, local[best].label, "row {i}");
            assert_eq!(out.labels, local.iter().map(|s| s.label).collect::<Vec<_>>());
            assert_eq!(out.deltas, vec![best == 0, best == 1]);
            assert_eq!(*first_gates.get_or_insert(out.gates), out.gates);
        }
    }
}

#[test]
fn party_scores_decrypt_to_label_and_quantized_score() {
    let fx = fixture();
    let be = Arc::new(PlainSimBackend::default());
    let mut fake_cloud = listen(&Endpoint::Mem("fake-cloud".into())).unwrap();
    let party = spawn_party(
        Arc::clone(&be),
        Arc::clone(&fx.banks[1]),
        &Endpoint::Mem("probed-party".into()),
        &fake_cloud.endpoint(),
        Duration::from_secs(30),
    )
    .unwrap();
    let (sk, ck) = be.keygen(77);
    let mut conn = connect(&party).unwrap();
    let y = row(&fx.test, 3);
    let mut received = Vec::new();
    for session in [SessionId(1), SessionId(2)] {
        let kd = Message::KeyDistribution {
            session,
            backend: "plain-sim".into(),
            cloud_key: cloud_key_to_token(&*be, &ck),
            n_b: 8,
            k: 2,
        };
        conn.send(&kd).unwrap();
        conn.send(&Message::Query { session, party: 1, y: y.clone() }).unwrap();
        if received.is_empty() {
            received.push(fake_cloud.accept().unwrap());
        }
        let msg = received[0].recv(Duration::from_secs(10)).unwrap();
        let Message::PartyScore { session: s, party, label, score } = msg else { panic!("expected a party score") };
        assert_eq!((s, party), (session, 1));
        let label = decrypt_word(&*be, &word_from_wire(&*be, &label, 8).unwrap(), &sk).unwrap();
        let score = decrypt_word(&*be, &word_from_wire(&*be, &score, 8).unwrap(), &sk).unwrap();
        let expect = local_classify(&y, &fx.banks[1]).unwrap();
        assert_eq!(label, expect.label as u64);
        assert_eq!(score, ((255.0 * expect.mu_bar).ceil()) as u64);
    }
    // A word must have exactly the session's width.
    assert!(word_from_wire(&*be, &["AAAA".to_string()], 8).is_err());
    assert!(cipher_from_token(&*be, "").is_err());
}

#[test]
fn tampered_frame_yields_no_result() {
    let fx = fixture();
    let net = deploy("tamper", &fx.banks, Duration::from_secs(2));
    let be = PlainSimBackend::default();
    let (_, ck) = be.keygen(5);
    let kd = Message::KeyDistribution { session: SessionId(9), backend: "plain-sim".into(), cloud_key: cloud_key_to_token(&be, &ck), n_b: 8, k: 2 };
    let mut frame = encode_frame(&kd).unwrap();
    let at = frame.len() - 10;
    frame[at] ^= 0x01;
    let mut c = connect(&net.cloud).unwrap();
    c.send_frame(&frame).unwrap();
    match c.recv(Duration::from_secs(5)) {
        Err(Error::Protocol(_)) => {}
        other => panic!("expected the cloud to drop the connection, got {other:?}"),
    }
}

#[test]
fn missing_party_times_out() {
    let fx = fixture();
    let be = Arc::new(PlainSimBackend::default());
    let (cloud, _) = spawn_cloud(Arc::clone(&be), &Endpoint::Mem("lonely-cloud".into()), Duration::from_millis(300)).unwrap();
    let p0 = spawn_party(Arc::clone(&be), Arc::clone(&fx.banks[0]), &Endpoint::Mem("lonely-p0".into()), &cloud, Duration::from_secs(5)).unwrap();
    // Accepts connections and never answers.
    let mut silent = listen(&Endpoint::Mem("silent-party".into())).unwrap();
    std::thread::spawn(move || {
        let mut held = Vec::new();
        while let Ok(c) = silent.accept() {
            held.push(c);
        }
    });
    let net = Network { cloud, parties: vec![p0, Endpoint::Mem("silent-party".into())] };
    let mut cfg = SessionConfig::new(8).unwrap();
    cfg.timeout = Duration::from_millis(300);
    let mut u = UserClient::connect(be, &net, cfg, 1).unwrap();
    let err = u.query(&row(&fx.test, 0)).unwrap_err();
    assert!(err.to_string().contains("timed out"), "{err}");
}

#[test]
fn wrong_dimension_aborts_session() {
    let fx = fixture();
    let net = deploy("baddim", &fx.banks, Duration::from_secs(5));
    let mut u = user(&net, 16);
    let err = u.query(&[0.5, 0.5]).unwrap_err();
    assert!(err.to_string().contains("aborted"), "{err}");
    // The connection stays usable.
    assert!(u.query(&row(&fx.test, 0)).is_ok());
}

#[test]
fn tcp_transport_matches_in_memory() {
    let fx = fixture();
    let be = Arc::new(PlainSimBackend::default());
    let (cloud, _) = spawn_cloud(Arc::clone(&be), &Endpoint::Tcp("127.0.0.1:0".into()), Duration::from_secs(30)).unwrap();
    let parties = fx
        .banks
        .iter()
        .map(|b| spawn_party(Arc::clone(&be), Arc::clone(b), &Endpoint::Tcp("127.0.0.1:0".into()), &cloud, Duration::from_secs(30)).unwrap())
        .collect();
    let tcp = Network { cloud, parties };
    let mem = deploy("versus-tcp", &fx.banks, Duration::from_secs(30));
    let (mut a, mut b) = (user(&tcp, 16), user(&mem, 16));
    for i in 0..20 {
        let y = row(&fx.test, i);
        let (x, z) = (a.query(&y).unwrap(), b.query(&y).unwrap());
        assert_eq!((x.label, x.deltas, x.gates), (z.label, z.deltas, z.gates));
    }
}

#[test]
fn session_config_rejects_other_widths() {
    assert!(SessionConfig::new(12).is_err());
    assert!(SessionConfig::new(8).is_ok());
}
