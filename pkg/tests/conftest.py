def pytest_addoption(parser):
    parser.addoption("--real-manifest", action="store", default=None,
                     help="corpus manifest for the optional real-data "
                          "acceptance run")


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: long-running acceptance criteria (minutes on a CPU)")
