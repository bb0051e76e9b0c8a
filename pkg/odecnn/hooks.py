#  MIT License
#
#  Copyright (c) 2021 ben
#
#  Permission is hereby granted, free of charge, to any person obtaining a copy
#  of this software and associated documentation files (the "Software"), to deal
#  in the Software without restriction, including without limitation the rights
#  to use, copy, modify, merge, publish, distribute, sublicense, and/or sell
#  copies of the Software, and to permit persons to whom the Software is
#  furnished to do so, subject to the following conditions:
#
#  The above copyright notice and this permission notice shall be included in all
#  copies or substantial portions of the Software.
#
#  THE SOFTWARE IS PROVIDED "AS IS", WITHOUT WARRANTY OF ANY KIND, EXPRESS OR
#  IMPLIED, INCLUDING BUT NOT LIMITED TO THE WARRANTIES OF MERCHANTABILITY,
#  FITNESS FOR A PARTICULAR PURPOSE AND NONINFRINGEMENT. IN NO EVENT SHALL THE
#  AUTHORS OR COPYRIGHT HOLDERS BE LIABLE FOR ANY CLAIM, DAMAGES OR OTHER
#  LIABILITY, WHETHER IN AN ACTION OF CONTRACT, TORT OR OTHERWISE, ARISING FROM,
#  OUT OF OR IN CONNECTION WITH THE SOFTWARE OR THE USE OR OTHER DEALINGS IN THE
#  SOFTWARE.
from __future__ import annotations
import enum
import logging
import typing as t

__all__: list[str] = ["HookTypes", "Hook", "HookManager", "dispatch_hooks"]

_LOGGER = logging.getLogger("odecnn.hooks")


class HookTypes(str, enum.Enum):
    """
    Enum of all hook types dispatched.
    The parameters listed for each type are the keyword arguments passed to the hook callback.
    """

    ERROR = "error"
    """
    Dispatched when a command raises an :obj:`~.errors.OdeError`.

    Parameters
    ----------
    error : :obj:`~.errors.OdeError`
        The error that was raised.
    """

    PRE_INVOKE = "pre_invoke"
    """
    Dispatched before a command is invoked, after its options were resolved.

    Parameters
    ----------
    context : :obj:`~.context.Context`
        The context of the invocation.
    """

    POST_INVOKE = "post_invoke"
    """
    Dispatched after a command invocation, regardless of errors.

    Parameters
    ----------
    context : :obj:`~.context.Context`
        The context of the invocation.
    """

    COMMAND_SUCCESS = "command_success"
    """
    Dispatched if a command invocation raises no errors.

    Parameters
    ----------
    context : :obj:`~.context.Context`
        The context of the invocation.
    """

    STEP_END = "step_end"
    """
    Dispatched after every optimizer step.

    Parameters
    ----------
    epoch : :obj:`int`
    step : :obj:`int`
    loss : :obj:`float`
    """

    EPOCH_END = "epoch_end"
    """
    Dispatched after every epoch's validation.

    Parameters
    ----------
    record : :obj:`~.training.EpochRecord`
        The metric log row of the epoch.
    """

    CHECKPOINT_SAVED = "checkpoint_saved"
    """
    Dispatched after a checkpoint was written.

    Parameters
    ----------
    path : :obj:`pathlib.Path`
    best : :obj:`bool`
        Whether this is the best-so-far checkpoint.
    """


class Hook:
    """A descriptor class for hook callbacks for better management of them."""

    __slots__ = ("callback", "name", "type")

    def __init__(self, callback: t.Callable[..., t.Any], name: str, type_: HookTypes) -> None:
        self.callback = callback
        self.name = name
        self.type = type_


class HookManager:
    """
    Named callbacks per :obj:`HookTypes` member. Used by the command handler and the trainer.

    Callback exceptions are logged and never propagated.
    """

    __slots__ = ("_type_to_hooks", "_names_to_hooks", "_owner")

    def __init__(self, owner: str = "odecnn") -> None:
        self._type_to_hooks: dict[HookTypes, list[Hook]] = {}
        self._names_to_hooks: dict[str, Hook] = {}
        self._owner: str = owner

    def __len__(self) -> int:
        return len(self._names_to_hooks)

    def dispatch(self, hook_type: HookTypes, **kwargs: t.Any) -> bool:
        """
        Call all the hook callables for that hook type.

        Returns
        -------
        :obj:`bool`
            True if any hooks were dispatched, false if there were no set hooks.
        """
        if hook_callables := self._type_to_hooks.get(hook_type):
            for hook in list(hook_callables):
                try:
                    hook.callback(**kwargs)
                except Exception as ex:
                    _LOGGER.error(
                        f"The {hook_type.name} hook callable '{hook.name}' raised the exception:",
                        exc_info=ex,
                    )
            return True
        return False

    def remove_hook(self, hook_name: str) -> HookManager:
        if hook_name not in self._names_to_hooks:
            _LOGGER.debug(f"Failed to remove the hook '{hook_name}' from '{self._owner}'.")
            return self

        hook = self._names_to_hooks.pop(hook_name)
        self._type_to_hooks[hook.type].remove(hook)
        _LOGGER.debug(f"Removed hook named '{hook_name}' from '{self._owner}'.")
        return self

    def with_hook_callback(
        self, hook_type: HookTypes, name: str
    ) -> t.Callable[[t.Callable[..., t.Any]], t.Callable[..., t.Any]]:
        """
        A decorator that adds the decorated function to the hooks.

        Examples
        --------
        .. code-block:: python
            trainer = odecnn.Trainer(...)

            @trainer.hooks.with_hook_callback(odecnn.HookTypes.EPOCH_END, "print_epoch")
            def print_epoch(record: odecnn.EpochRecord) -> None:
                print(record.as_csv())

        Returns
        -------
        Callable[..., `Any`]
            The original function that was decorated.
        """

        def decorate(func: t.Callable[..., t.Any]) -> t.Callable[..., t.Any]:
            self.add_hook_callback(hook_type, func, name)
            return func

        return decorate

    def add_hook_callback(self, hook_type: HookTypes, callback: t.Callable[..., t.Any], name: str) -> HookManager:
        """
        Add a callback for a hook type. See :obj:`~.hooks.HookTypes` for the keyword arguments each type passes.

        Returns
        -------
        :obj:`~.hooks.HookManager`
            The instance of the hooks to allow for chain calls.
        """
        error_msg = f"Failed to add hook callback '{callback}' to '{self._owner}' as "
        if not isinstance(hook_type, HookTypes):
            _LOGGER.error(error_msg + f"'{hook_type}' is not a valid hook type.")
            return self

        if name in self._names_to_hooks:
            _LOGGER.error(error_msg + f"there is already a hook named '{name}'.")
            return self

        hook = Hook(callback=callback, name=name, type_=hook_type)
        self._names_to_hooks[name] = hook
        self._type_to_hooks.setdefault(hook_type, []).append(hook)

        _LOGGER.debug(f"Added '{hook_type.name}' hook callback '{callback}' to '{self._owner}' with the name '{name}'.")
        return self


def dispatch_hooks(
    hook_type: HookTypes, *managers: t.Optional[HookManager], **kwargs: t.Any
) -> bool:
    """
    Dispatch a hook type to the first manager, most specific first, that has callbacks for it.

    Returns
    -------
    :obj:`bool`
        True if any hooks were dispatched, false if there were no set hooks.
    """
    for manager in managers:
        if manager is not None and manager.dispatch(hook_type, **kwargs):
            _LOGGER.debug(f"All available {hook_type.value} hooks were dispatched.")
            return True
    return False
