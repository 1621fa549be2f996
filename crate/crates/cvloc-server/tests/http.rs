//! End-to-end tests against a live server on an ephemeral port, driven
//! through the typed client.

use cvloc_api::{
    Client, ClientError, DataSpec, DatabaseSpec, ExperimentRequest, KmlCheckRequest,
    SessionCreateRequest, SessionInit, SessionStepRequest, SweepRequest, TableCheckRequest,
    TableKind,
};
use cvloc_core::experiment::{
    run_experiment, DataSource, ExperimentSpec, InitMode, TrajectorySpec,
};
use cvloc_core::filter::{FilterConfig, Strategy};
use cvloc_core::geo::{GeoCoordinate, Position2};
use cvloc_core::sim::{generate_ground_run, generate_world, WorldConfig};

async fn start() -> Client {
    let (addr, _handle) = cvloc_server::spawn_ephemeral().await.expect("bind ephemeral server");
    Client::new(format!("http://{addr}"))
}

fn small_world() -> WorldConfig {
    WorldConfig {
        area_size: 200.0,
        grid_spacing: 20.0,
        descriptor_dim: 6,
        descriptor_noise_sigma: 0.5,
        alias_groups: 0,
        pairing_noise_sigma: 2.0,
        seed: 5,
    }
}

fn short_trajectory() -> TrajectorySpec {
    TrajectorySpec {
        waypoints: vec![Position2::new(40.0, 40.0), Position2::new(160.0, 120.0)],
        speed: 4.0,
    }
}

fn small_request(strategy: Strategy) -> ExperimentRequest {
    ExperimentRequest {
        data: DataSpec::Synthetic { world: small_world(), trajectory: short_trajectory() },
        filter: FilterConfig { strategy, num_particles: 100, seed: 9, ..FilterConfig::default() },
        runs: 2,
        init_mode: InitMode::KnownStart,
        velocity_noise_sigma: 1.0,
    }
}

fn expect_api_error(result: Result<impl std::fmt::Debug, ClientError>, status: u16) -> String {
    match result {
        Err(ClientError::Api { status: got, message }) => {
            assert_eq!(got, status, "unexpected status: {message}");
            message
        }
        other => panic!("expected an API error, got {other:?}"),
    }
}

#[tokio::test]
async fn run_over_http_matches_direct_call() {
    let client = start().await;
    client.health().await.unwrap();

    let request = small_request(Strategy::Capf);
    let over_http = client.run(&request).await.unwrap();

    let direct = run_experiment(&ExperimentSpec {
        data: DataSource::Synthetic { world: small_world(), trajectory: short_trajectory() },
        filter: request.filter.clone(),
        runs: request.runs,
        init_mode: request.init_mode,
        velocity_noise_sigma: request.velocity_noise_sigma,
    })
    .unwrap();

    // Floats survive the JSON round trip exactly, so this is full equality.
    assert_eq!(over_http, direct);
}

#[tokio::test]
async fn compare_runs_both_strategies_on_same_scenario() {
    let client = start().await;
    let comparison = client.compare(&small_request(Strategy::Ppf)).await.unwrap();

    assert_eq!(comparison.ppf.strategy, Strategy::Ppf);
    assert_eq!(comparison.capf.strategy, Strategy::Capf);
    // Dead reckoning ignores the fusion strategy, so the error streams match.
    assert_eq!(comparison.ppf.err_dr, comparison.capf.err_dr);
    let ratio = comparison.std_ratio();
    assert!((ratio - comparison.capf.err_est.std / comparison.ppf.err_est.std).abs() < 1e-12);
}

#[tokio::test]
async fn sweep_endpoint_applies_parameter_values() {
    let client = start().await;
    let report = client
        .sweep(&SweepRequest {
            experiment: small_request(Strategy::Capf),
            parameter: "velocity_noise_sigma".into(),
            values: vec![0.0, 2.0],
        })
        .await
        .unwrap();

    assert_eq!(report.parameter, "velocity_noise_sigma");
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.rows[0].value, 0.0);
    // No velocity noise means dead reckoning is exact.
    assert!(report.rows[0].report.err_dr.mean < 1e-9);
    assert!(report.rows[1].report.err_dr.mean > 1.0);
}

#[tokio::test]
async fn unknown_sweep_parameter_is_rejected_with_knob_list() {
    let client = start().await;
    let result = client
        .sweep(&SweepRequest {
            experiment: small_request(Strategy::Capf),
            parameter: "particle_count".into(),
            values: vec![1.0],
        })
        .await;
    let message = expect_api_error(result, 400);
    assert!(message.contains("valid knobs"), "got: {message}");
    assert!(message.contains("M"), "got: {message}");
}

#[tokio::test]
async fn invalid_filter_config_is_rejected() {
    let client = start().await;
    let mut request = small_request(Strategy::Capf);
    request.filter.num_particles = 0;
    let message = expect_api_error(client.run(&request).await, 400);
    assert!(message.contains("num_particles"), "got: {message}");
}

#[tokio::test]
async fn kml_check_reports_count_and_endpoints() {
    let client = start().await;
    let text = "<kml><Placemark><LineString><coordinates>\n\
                8.54,47.37,0 8.55,47.38,0 8.56,47.39\n\
                </coordinates></LineString></Placemark></kml>"
        .to_string();
    let resp = client.check_kml(&KmlCheckRequest { text }).await.unwrap();
    assert_eq!(resp.count, 3);
    // KML stores lon,lat; the response is lat,lon.
    assert_eq!(resp.first.lat(), 47.37);
    assert_eq!(resp.first.lon(), 8.54);
    assert_eq!(resp.last.lat(), 47.39);

    let bad = client.check_kml(&KmlCheckRequest { text: "<kml></kml>".into() }).await;
    let message = expect_api_error(bad, 400);
    assert!(message.contains("no coordinates"), "got: {message}");
}

#[tokio::test]
async fn table_check_validates_both_kinds() {
    let client = start().await;
    let local = "id,x,y,d0,d1\n1,10,20,0.5,-0.25\n2,30,20,1.5,0.75\n";
    let resp = client
        .check_table(&TableCheckRequest {
            text: local.into(),
            kind: TableKind::Aerial,
            frame_origin: None,
        })
        .await
        .unwrap();
    assert_eq!((resp.rows, resp.dimension, resp.geodetic), (2, 2, false));

    // A query table may repeat ids (several queries of one aerial cell).
    let queries = "id,x,y,d0,d1\n7,10,20,0.5,-0.25\n7,30,20,1.5,0.75\n";
    let resp = client
        .check_table(&TableCheckRequest {
            text: queries.into(),
            kind: TableKind::Query,
            frame_origin: None,
        })
        .await
        .unwrap();
    assert_eq!(resp.rows, 2);

    // An aerial table may not.
    let dup = client
        .check_table(&TableCheckRequest {
            text: queries.into(),
            kind: TableKind::Aerial,
            frame_origin: None,
        })
        .await;
    let message = expect_api_error(dup, 400);
    assert!(message.contains("duplicate"), "got: {message}");

    // Geodetic columns demand a frame origin...
    let geodetic = "id,lat,lon,d0\n1,47.37,8.54,0.5\n";
    let missing = client
        .check_table(&TableCheckRequest {
            text: geodetic.into(),
            kind: TableKind::Aerial,
            frame_origin: None,
        })
        .await;
    let message = expect_api_error(missing, 400);
    assert!(message.contains("frame origin"), "got: {message}");

    // ...and work once one is given.
    let resp = client
        .check_table(&TableCheckRequest {
            text: geodetic.into(),
            kind: TableKind::Aerial,
            frame_origin: Some(GeoCoordinate::new(47.37, 8.54).unwrap()),
        })
        .await
        .unwrap();
    assert_eq!((resp.rows, resp.dimension, resp.geodetic), (1, 1, true));
}

#[tokio::test]
async fn session_lifecycle_steps_a_live_filter() {
    let client = start().await;
    let world = small_world();
    let db = generate_world(&world).unwrap();
    let trajectory = short_trajectory();
    let run = generate_ground_run(&world, &db, &trajectory.waypoints, trajectory.speed, 0.5)
        .unwrap();

    let filter =
        FilterConfig { num_particles: 150, seed: 13, ..FilterConfig::default() };
    let start_pos = run.truth[0].position;
    let info = client
        .create_session(&SessionCreateRequest {
            database: DatabaseSpec::Synthetic { world: world.clone() },
            filter,
            init: SessionInit::KnownStart { position: start_pos },
        })
        .await
        .unwrap();
    assert_eq!(info.steps, 0);
    assert_eq!(info.num_particles, 150);
    assert!(position_error(info.estimate, start_pos) < 5.0);

    let mut last = info.estimate;
    for j in 1..=10 {
        let resp = client
            .step_session(
                info.id,
                &SessionStepRequest {
                    velocity: run.velocities[j],
                    dt: 1.0,
                    query: run.queries[j].values().to_vec(),
                },
            )
            .await
            .unwrap();
        assert_eq!(resp.steps, j as u64);
        last = resp.estimate;
    }
    assert!(position_error(last, run.truth[10].position) < 25.0);

    let fetched = client.get_session(info.id).await.unwrap();
    assert_eq!(fetched.steps, 10);
    assert_eq!(fetched.estimate, last);

    client.delete_session(info.id).await.unwrap();
    expect_api_error(client.get_session(info.id).await, 404);
    let step_after = client
        .step_session(
            info.id,
            &SessionStepRequest {
                velocity: run.velocities[1],
                dt: 1.0,
                query: run.queries[1].values().to_vec(),
            },
        )
        .await;
    expect_api_error(step_after, 404);
}

#[tokio::test]
async fn session_can_initialize_from_a_first_query() {
    let client = start().await;
    let world = small_world();
    let db = generate_world(&world).unwrap();
    let trajectory = short_trajectory();
    let run = generate_ground_run(&world, &db, &trajectory.waypoints, trajectory.speed, 0.5)
        .unwrap();

    let info = client
        .create_session(&SessionCreateRequest {
            database: DatabaseSpec::Synthetic { world },
            filter: FilterConfig { seed: 3, ..FilterConfig::default() },
            init: SessionInit::FirstQuery { descriptor: run.queries[0].values().to_vec() },
        })
        .await
        .unwrap();
    // The cloud centers on the retrieval estimate, which lives in the world.
    assert!(info.estimate.x >= 0.0 && info.estimate.x <= 200.0);
    assert!(info.estimate.y >= 0.0 && info.estimate.y <= 200.0);

    // Stepping with a query of the wrong dimension is a client error.
    let result = client
        .step_session(
            info.id,
            &SessionStepRequest {
                velocity: run.velocities[1],
                dt: 1.0,
                query: vec![0.0; 3],
            },
        )
        .await;
    expect_api_error(result, 400);
}

fn position_error(a: Position2, b: Position2) -> f64 {
    ((a.x - b.x).powi(2) + (a.y - b.y).powi(2)).sqrt()
}
