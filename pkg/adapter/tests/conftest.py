import pytest

from trackforge.config import RunConfig
from trackforge.sensors import LidarConfig
from trackforge.trackgen import TrackGenConfig, generate_track
from trackforge.wire import EnvServer

LIDAR = LidarConfig(beam_count=24)


@pytest.fixture(scope="session")
def pool():
    return [generate_track(s, TrackGenConfig()) for s in (51, 52)]


@pytest.fixture(scope="session")
def server(pool):
    srv = EnvServer(RunConfig(seed=1, lidar=LIDAR), pool)
    srv.serve_in_background()
    yield srv
    srv.shutdown()
    srv.server_close()
