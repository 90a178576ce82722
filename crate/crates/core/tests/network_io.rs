use trafsim::netmodel::{load_network, parse_network, save_network, write_network, NetError};
use trafsim::{generate_grid, GridSpec};

#[test]
fn large_grid_round_trips_through_a_file() {
    let net = generate_grid(&GridSpec { cols: 150, rows: 10, ..GridSpec::default() }).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("grid.net");
    save_network(&net, &path).unwrap();
    let back = load_network(&path).unwrap();
    assert_eq!(back, net);
    assert_eq!(write_network(&back), write_network(&net));
    assert_eq!(back.junctions.len(), 1500);
    // Two directed edges per 4-neighbour adjacency.
    assert_eq!(back.edges.len(), 2 * (149 * 10 + 150 * 9));
    for (i, e) in net.edges.iter().enumerate() {
        let id = back.edge_id(&e.id).unwrap();
        assert_eq!(id.0, i);
        assert_eq!(back.edge(id).length, e.length);
    }
}

#[test]
fn minimal_file() {
    let net = parse_network("[junctions]\na,0,0\nb,10,0\n[edges]\nab,a,b,10,5,1\n").unwrap();
    assert_eq!((net.junctions.len(), net.edges.len()), (2, 1));
    assert!(net.validate().is_empty());
}

#[test]
fn dangling_edge_reference_names_the_id() {
    let text = "[junctions]\na,0,0\nb,10,0\n[edges]\nab,a,b,10,5,1\n[connections]\nab,0,e9,0\n";
    let err = parse_network(text).unwrap_err();
    assert!(err.to_string().contains("e9"), "{err}");
    assert!(matches!(err, NetError::Dangling { kind: _, ref id } if id == "e9"), "{err:?}");
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(load_network(dir.path().join("absent.net")).is_err());
}
